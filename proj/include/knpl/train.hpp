#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "knpl/corpus.hpp"
#include "knpl/model.hpp"
#include "knpl/tokenizer.hpp"

namespace knpl::train {

struct TrainConfig {
    std::uint64_t seed = 1;
    int epochs = 12;
    double learning_rate = 3e-3;
    std::string lr_schedule = "cosine"; // "cosine" (decays to 10%) or "constant"
    int batch_rows = 512;           // token rows packed into one optimizer step
    std::string optimizer = "adam"; // "adam" or "sgd"
    double beta1 = 0.9;
    double beta2 = 0.999;
    double adam_eps = 1e-8;
    double grad_clip = 1.0;         // global-norm cap; 0 disables
    double two_hop_fraction = 0.5;  // share of composed questions included in training
    int recall_sample = 32;         // facts probed for the per-epoch recall column
    double divergence_loss = 1e4;

    void validate() const;
};

// One training sequence: token ids plus the index of the first answer token.
// The loss is masked so only answer tokens (and the end marker) are predicted.
struct TrainingSequence {
    std::vector<int> tokens;
    std::size_t answer_start = 0;
};

// Single-hop paraphrases (all but the held-out one per fact), declarative
// statements of each fact, and a seeded fraction of the composed questions.
std::vector<TrainingSequence> build_training_set(
    const corpus::World& world, const std::vector<corpus::TwoHopInstance>& instances,
    const Tokenizer& tokenizer, double two_hop_fraction);

struct EpochStat {
    int epoch = 0;
    double mean_loss = 0.0;
    double recall = 0.0; // sampled held-out-paraphrase estimate, not the full sweep
};

struct TrainResult {
    model::Model net;
    std::vector<EpochStat> log;
};

// Line-delimited "epoch,mean_loss,recall" rendering of the epoch log.
std::string format_training_log(const std::vector<EpochStat>& log);

TrainResult train_model(const TrainConfig& config, const model::ModelConfig& arch,
                        const corpus::World& world,
                        const std::vector<corpus::TwoHopInstance>& instances,
                        const Tokenizer& tokenizer);

// Greedy decode of every paraphrased query must reproduce the object's exact
// token sequence (end marker stripped).
bool knows_fact(const model::Model& net, const corpus::FactTriplet& fact,
                const corpus::World& world, const Tokenizer& tokenizer);

// Per-paraphrase breakdown backing knows_fact; knows_fact is the conjunction.
std::vector<bool> paraphrase_matches(const model::Model& net, const corpus::FactTriplet& fact,
                                     const corpus::World& world, const Tokenizer& tokenizer);

// Fraction of world facts passing knows_fact.
double recall_rate(const model::Model& net, const corpus::World& world,
                   const Tokenizer& tokenizer);

// Decode-step allowance per prompt condition; reasoning conditions need room
// for worked statements before the answer.
int decode_budget(corpus::PromptCondition condition);

// Answer span of a generated continuation: tokens after the last "answer :"
// marker when present, otherwise the whole continuation, end marker stripped.
std::vector<int> extract_answer(const std::vector<int>& generated, const Tokenizer& tokenizer);

struct OmegaPartition {
    std::vector<int> omega_t; // instance ids answered correctly, ascending
    std::vector<int> omega_f; // the rest, ascending
};

struct DecodeRecord {
    int instance_id = -1;
    std::vector<int> produced; // extracted answer tokens
    bool correct = false;
};

// Splits instances by whether the greedy answer to the composed question is
// the true object. Every instance must pass knows_fact on both hops first.
OmegaPartition partition_omega(const model::Model& net, const corpus::World& world,
                               const std::vector<corpus::TwoHopInstance>& instances,
                               const Tokenizer& tokenizer,
                               corpus::PromptCondition condition = corpus::PromptCondition::NoCoT,
                               std::vector<DecodeRecord>* decode_log = nullptr);

} // namespace knpl::train
