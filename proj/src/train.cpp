#include "knpl/train.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <set>

#include "knpl/error.hpp"
#include "knpl/rng.hpp"
#include "knpl/tape.hpp"

namespace knpl::train {

namespace {

using ad::Mat;
using ad::Tape;
using ad::Tensor;

TrainingSequence make_sequence(const std::vector<int>& prompt, const std::vector<int>& answer) {
    TrainingSequence seq;
    seq.tokens = prompt;
    seq.answer_start = seq.tokens.size();
    seq.tokens.insert(seq.tokens.end(), answer.begin(), answer.end());
    seq.tokens.push_back(Tokenizer::kEoa);
    return seq;
}

struct StepBatch {
    model::PackedBatch packed;
    std::vector<int> targets;
    std::vector<double> mask;
    double mask_rows = 0.0;
};

StepBatch make_step(const std::vector<TrainingSequence>& seqs, const std::vector<std::size_t>& idx) {
    std::vector<std::vector<int>> blocks;
    blocks.reserve(idx.size());
    for (std::size_t i : idx) blocks.push_back(seqs[i].tokens);
    StepBatch step;
    step.packed = model::pack_sequences(blocks);
    for (std::size_t i : idx) {
        const TrainingSequence& s = seqs[i];
        for (std::size_t t = 0; t < s.tokens.size(); ++t) {
            bool predict_answer = t + 1 < s.tokens.size() && t + 1 >= s.answer_start;
            step.targets.push_back(predict_answer ? s.tokens[t + 1] : 0);
            step.mask.push_back(predict_answer ? 1.0 : 0.0);
            if (predict_answer) step.mask_rows += 1.0;
        }
    }
    return step;
}

// Adam moments per weight tensor, in named_tensors order.
struct OptimizerState {
    std::vector<Mat> m;
    std::vector<Mat> v;
    long step = 0;
};

// Cosine decay from the configured rate down to 10% of it over the run.
double epoch_lr(const TrainConfig& cfg, int epoch) {
    if (cfg.lr_schedule == "constant" || cfg.epochs <= 1) return cfg.learning_rate;
    double u = static_cast<double>(epoch - 1) / static_cast<double>(cfg.epochs - 1);
    double w = 0.5 * (1.0 + std::cos(3.14159265358979323846 * u));
    return cfg.learning_rate * (0.1 + 0.9 * w);
}

void apply_update(model::Model& net, const std::vector<Tensor>& grads, const TrainConfig& cfg,
                  double lr, OptimizerState& state) {
    auto tensors = net.named_tensors();
    double clip_factor = 1.0;
    if (cfg.grad_clip > 0.0) {
        double sq = 0.0;
        for (const Tensor& g : grads) sq += g.mat().squaredNorm();
        double norm = std::sqrt(sq);
        if (norm > cfg.grad_clip) clip_factor = cfg.grad_clip / norm;
    }
    state.step += 1;
    for (std::size_t i = 0; i < tensors.size(); ++i) {
        Tensor* w = tensors[i].second;
        Mat g = grads[i].mat() * clip_factor;
        if (cfg.optimizer == "sgd") {
            *w = w->with_same_shape(w->mat() - lr * g);
            continue;
        }
        Mat& m = state.m[i];
        Mat& v = state.v[i];
        m = cfg.beta1 * m + (1.0 - cfg.beta1) * g;
        v = cfg.beta2 * v + (1.0 - cfg.beta2) * g.cwiseProduct(g);
        double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(state.step));
        double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(state.step));
        Mat mhat = m / bc1;
        Mat vhat = v / bc2;
        Mat denom = (vhat.cwiseSqrt().array() + cfg.adam_eps).matrix();
        *w = w->with_same_shape(w->mat() - lr * mhat.cwiseQuotient(denom));
    }
}

bool sequence_matches(const model::Model& net, const std::vector<int>& prompt,
                      const std::vector<int>& answer) {
    int budget = static_cast<int>(answer.size()) + 2;
    model::GreedyResult res = model::generate_greedy(net, prompt, budget, {}, false);
    if (!res.hit_end) return false;
    std::vector<int> got(res.tokens.begin(), res.tokens.end() - 1); // strip end marker
    return got == answer;
}

} // namespace

void TrainConfig::validate() const {
    if (epochs < 1) raise(ErrorKind::Config, "epochs must be at least 1");
    if (learning_rate <= 0.0) raise(ErrorKind::Config, "learning rate must be positive");
    if (lr_schedule != "cosine" && lr_schedule != "constant")
        raise(ErrorKind::Config, "unknown lr_schedule: " + lr_schedule);
    if (batch_rows < 8) raise(ErrorKind::Config, "batch_rows is too small to fit a sequence");
    if (optimizer != "adam" && optimizer != "sgd")
        raise(ErrorKind::Config, "unknown optimizer: " + optimizer);
    if (two_hop_fraction < 0.0 || two_hop_fraction > 1.0)
        raise(ErrorKind::Config, "two_hop_fraction must lie in [0, 1]");
    if (recall_sample < 1) raise(ErrorKind::Config, "recall_sample must be positive");
}

std::vector<TrainingSequence> build_training_set(
    const corpus::World& world, const std::vector<corpus::TwoHopInstance>& instances,
    const Tokenizer& tokenizer, double two_hop_fraction) {
    if (two_hop_fraction < 0.0 || two_hop_fraction > 1.0)
        raise(ErrorKind::Config, "two_hop_fraction must lie in [0, 1]");
    std::vector<TrainingSequence> seqs;
    for (const corpus::FactTriplet& fact : world.facts) {
        std::vector<std::string> queries = corpus::render_queries(fact, world);
        std::size_t hold = corpus::holdout_query_index(world, fact);
        std::vector<int> answer = corpus::answer_tokens(world, fact.o, tokenizer);
        for (std::size_t i = 0; i < queries.size(); ++i) {
            if (i == hold) continue;
            seqs.push_back(
                make_sequence(corpus::assemble_fact_prompt(queries[i], tokenizer), answer));
        }
        // Declarative form, so statements seen at probe time are in-domain.
        // The span from the object onward is predicted.
        std::string statement = corpus::render_statement(fact, world);
        std::vector<int> ids;
        ids.push_back(Tokenizer::kBos);
        for (int id : tokenizer.encode(statement)) ids.push_back(id);
        TrainingSequence stmt;
        stmt.tokens = std::move(ids);
        stmt.tokens.push_back(Tokenizer::kEoa);
        stmt.answer_start = stmt.tokens.size() - 2 - answer.size(); // object + "." + end
        seqs.push_back(std::move(stmt));
    }
    for (const corpus::TwoHopInstance& inst : instances) {
        Rng rng(derive_seed(world.seed, "twohop-train:" + std::to_string(inst.id)));
        if (rng.uniform01() >= two_hop_fraction) continue;
        std::vector<int> answer = corpus::answer_tokens(world, inst.answer, tokenizer);
        seqs.push_back(make_sequence(
            corpus::assemble_prompt(inst, corpus::PromptCondition::NoCoT, {}, tokenizer), answer));
    }
    return seqs;
}

std::string format_training_log(const std::vector<EpochStat>& log) {
    std::string out;
    char line[128];
    for (const EpochStat& s : log) {
        std::snprintf(line, sizeof(line), "%d,%.17g,%.6f\n", s.epoch, s.mean_loss, s.recall);
        out += line;
    }
    return out;
}

TrainResult train_model(const TrainConfig& config, const model::ModelConfig& arch,
                        const corpus::World& world,
                        const std::vector<corpus::TwoHopInstance>& instances,
                        const Tokenizer& tokenizer) {
    config.validate();
    if (world.facts.empty()) raise(ErrorKind::Config, "cannot train on a world with no facts");

    model::ModelConfig cfg = arch;
    cfg.vocab_size = tokenizer.size();
    cfg.validate();

    TrainResult result{model::Model::init(cfg, derive_seed(config.seed, "init")), {}};
    std::vector<TrainingSequence> seqs =
        build_training_set(world, instances, tokenizer, config.two_hop_fraction);
    for (const TrainingSequence& s : seqs)
        if (static_cast<int>(s.tokens.size()) > config.batch_rows)
            raise(ErrorKind::Config, "a training sequence exceeds batch_rows");

    OptimizerState state;
    auto tensors = result.net.named_tensors();
    for (auto& [name, w] : tensors) {
        state.m.push_back(Mat::Zero(w->mat().rows(), w->mat().cols()));
        state.v.push_back(Mat::Zero(w->mat().rows(), w->mat().cols()));
    }

    // Fixed fact sample for the per-epoch recall estimate.
    Rng sample_rng(derive_seed(config.seed, "recall-sample"));
    std::size_t n_sample = std::min<std::size_t>(world.facts.size(),
                                                 static_cast<std::size_t>(config.recall_sample));
    std::vector<std::size_t> probe_facts =
        sample_rng.sample_without_replacement(world.facts.size(), n_sample);

    std::vector<std::size_t> order(seqs.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;

    for (int epoch = 1; epoch <= config.epochs; ++epoch) {
        Rng shuffle_rng(derive_seed(config.seed, "epoch:" + std::to_string(epoch)));
        shuffle_rng.shuffle(order);
        double lr = epoch_lr(config, epoch);

        double loss_sum = 0.0;
        double loss_rows = 0.0;
        std::size_t cursor = 0;
        while (cursor < order.size()) {
            std::vector<std::size_t> idx;
            int rows = 0;
            while (cursor < order.size()) {
                int len = static_cast<int>(seqs[order[cursor]].tokens.size());
                if (!idx.empty() && rows + len > config.batch_rows) break;
                idx.push_back(order[cursor]);
                rows += len;
                ++cursor;
            }
            StepBatch step = make_step(seqs, idx);
            try {
                Tape tape;
                model::TapedWeights weights = model::weights_as_leaves(tape, result.net, true);
                model::TapedForward fwd = model::build_forward(tape, weights, step.packed, {});
                ad::NodeId loss = ad::cross_entropy(tape, fwd.logits, step.targets, step.mask);
                double loss_val = tape.value(loss).item();
                if (!std::isfinite(loss_val) || loss_val > config.divergence_loss)
                    raise(ErrorKind::Training,
                          "loss diverged at epoch " + std::to_string(epoch));
                std::vector<Tensor> grads = tape.grad(loss, weights.ids);
                apply_update(result.net, grads, config, lr, state);
                loss_sum += loss_val * step.mask_rows;
                loss_rows += step.mask_rows;
            } catch (const Error& e) {
                if (e.kind() == ErrorKind::NumericDomain)
                    raise(ErrorKind::Training, "training diverged at epoch " +
                                                   std::to_string(epoch) + ": " + e.what());
                throw;
            }
        }

        // Recall estimate: held-out paraphrase of each sampled fact.
        int hits = 0;
        for (std::size_t fi : probe_facts) {
            const corpus::FactTriplet& fact = world.facts[fi];
            std::vector<std::string> queries = corpus::render_queries(fact, world);
            std::size_t hold = corpus::holdout_query_index(world, fact);
            if (sequence_matches(result.net,
                                 corpus::assemble_fact_prompt(queries[hold], tokenizer),
                                 corpus::answer_tokens(world, fact.o, tokenizer)))
                ++hits;
        }
        result.log.push_back({epoch, loss_sum / std::max(1.0, loss_rows),
                              probe_facts.empty()
                                  ? 0.0
                                  : static_cast<double>(hits) /
                                        static_cast<double>(probe_facts.size())});
    }
    return result;
}

std::vector<bool> paraphrase_matches(const model::Model& net, const corpus::FactTriplet& fact,
                                     const corpus::World& world, const Tokenizer& tokenizer) {
    std::vector<std::string> queries = corpus::render_queries(fact, world);
    std::vector<int> answer = corpus::answer_tokens(world, fact.o, tokenizer);
    std::vector<bool> out;
    out.reserve(queries.size());
    for (const std::string& q : queries)
        out.push_back(
            sequence_matches(net, corpus::assemble_fact_prompt(q, tokenizer), answer));
    return out;
}

bool knows_fact(const model::Model& net, const corpus::FactTriplet& fact,
                const corpus::World& world, const Tokenizer& tokenizer) {
    std::vector<std::string> queries = corpus::render_queries(fact, world);
    std::vector<int> answer = corpus::answer_tokens(world, fact.o, tokenizer);
    for (const std::string& q : queries)
        if (!sequence_matches(net, corpus::assemble_fact_prompt(q, tokenizer), answer))
            return false;
    return true;
}

double recall_rate(const model::Model& net, const corpus::World& world,
                   const Tokenizer& tokenizer) {
    if (world.facts.empty()) return 0.0;
    int known = 0;
    for (const corpus::FactTriplet& f : world.facts)
        if (knows_fact(net, f, world, tokenizer)) ++known;
    return static_cast<double>(known) / static_cast<double>(world.facts.size());
}

int decode_budget(corpus::PromptCondition condition) {
    return condition == corpus::PromptCondition::NoCoT ? 6 : 32;
}

std::vector<int> extract_answer(const std::vector<int>& generated, const Tokenizer& tokenizer) {
    std::vector<int> tokens = generated;
    if (!tokens.empty() && tokens.back() == Tokenizer::kEoa) tokens.pop_back();
    std::vector<int> marker = corpus::answer_marker_tokens(tokenizer);
    bool found = false;
    auto last = tokens.begin();
    auto it = std::search(tokens.begin(), tokens.end(), marker.begin(), marker.end());
    while (it != tokens.end()) {
        found = true;
        last = it + static_cast<long>(marker.size());
        it = std::search(last, tokens.end(), marker.begin(), marker.end());
    }
    if (found) return {last, tokens.end()};
    return tokens;
}

OmegaPartition partition_omega(const model::Model& net, const corpus::World& world,
                               const std::vector<corpus::TwoHopInstance>& instances,
                               const Tokenizer& tokenizer, corpus::PromptCondition condition,
                               std::vector<DecodeRecord>* decode_log) {
    OmegaPartition part;
    for (const corpus::TwoHopInstance& inst : instances) {
        if (!knows_fact(net, inst.fact1, world, tokenizer) ||
            !knows_fact(net, inst.fact2, world, tokenizer))
            raise(ErrorKind::FilteredInput,
                  "instance " + std::to_string(inst.id) +
                      " fails single-hop recall and must be filtered out first");
        std::vector<int> prompt = corpus::assemble_prompt(inst, condition, {}, tokenizer);
        model::GreedyResult res =
            model::generate_greedy(net, prompt, decode_budget(condition), {}, false);
        std::vector<int> produced = extract_answer(res.tokens, tokenizer);
        bool correct = produced == corpus::answer_tokens(world, inst.answer, tokenizer);
        (correct ? part.omega_t : part.omega_f).push_back(inst.id);
        if (decode_log) decode_log->push_back({inst.id, produced, correct});
    }
    std::sort(part.omega_t.begin(), part.omega_t.end());
    std::sort(part.omega_f.begin(), part.omega_f.end());
    return part;
}

} // namespace knpl::train
