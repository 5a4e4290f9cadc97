#pragma once

#include <string>
#include <unordered_map>
#include <vector>

namespace knpl {

// Word-level tokenizer. Ids 0..2 are reserved for the specials below; the
// remaining vocabulary is sorted lexicographically so the mapping depends
// only on the word set, not on insertion order.
class Tokenizer {
public:
    static constexpr int kBos = 0;
    static constexpr int kEoa = 1; // end of answer
    static constexpr int kSep = 2;

    static Tokenizer build(std::vector<std::string> words);

    int size() const { return static_cast<int>(words_.size()); }
    bool has(const std::string& word) const { return index_.count(word) > 0; }
    int id(const std::string& word) const;
    const std::string& word(int id) const;

    // Splits on runs of whitespace. Unknown words are a parse error.
    std::vector<int> encode(const std::string& text) const;
    std::string decode(const std::vector<int>& ids, bool skip_specials = false) const;

    static bool is_special(int id) { return id >= 0 && id <= kSep; }

private:
    std::vector<std::string> words_;
    std::unordered_map<std::string, int> index_;
};

} // namespace knpl
