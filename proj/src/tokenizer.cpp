#include "knpl/tokenizer.hpp"

#include <algorithm>
#include <sstream>

#include "knpl/error.hpp"

namespace knpl {

Tokenizer Tokenizer::build(std::vector<std::string> words) {
    std::sort(words.begin(), words.end());
    words.erase(std::unique(words.begin(), words.end()), words.end());

    Tokenizer t;
    t.words_ = {"[BOS]", "[EOA]", "[SEP]"};
    for (std::string& w : words) {
        if (w.empty()) {
            raise(ErrorKind::Config, "tokenizer: empty word");
        }
        if (w == "[BOS]" || w == "[EOA]" || w == "[SEP]") {
            continue; // specials already present
        }
        for (char c : w) {
            if (std::isspace(static_cast<unsigned char>(c))) {
                raise(ErrorKind::Config, "tokenizer: word contains whitespace: '" + w + "'");
            }
        }
        t.words_.push_back(std::move(w));
    }
    for (int i = 0; i < static_cast<int>(t.words_.size()); ++i) {
        t.index_.emplace(t.words_[static_cast<std::size_t>(i)], i);
    }
    return t;
}

int Tokenizer::id(const std::string& word) const {
    auto it = index_.find(word);
    if (it == index_.end()) {
        raise(ErrorKind::Parse, "tokenizer: unknown word '" + word + "'");
    }
    return it->second;
}

const std::string& Tokenizer::word(int id) const {
    if (id < 0 || id >= size()) {
        raise(ErrorKind::Parse, "tokenizer: id " + std::to_string(id) + " outside vocabulary of " +
                                    std::to_string(size()));
    }
    return words_[static_cast<std::size_t>(id)];
}

std::vector<int> Tokenizer::encode(const std::string& text) const {
    std::vector<int> out;
    std::istringstream is(text);
    std::string w;
    while (is >> w) {
        out.push_back(id(w));
    }
    return out;
}

std::string Tokenizer::decode(const std::vector<int>& ids, bool skip_specials) const {
    std::string out;
    for (int id : ids) {
        if (skip_specials && is_special(id)) continue;
        if (!out.empty()) out += ' ';
        out += word(id);
    }
    return out;
}

} // namespace knpl
