#ifndef DRIVEGEN_VOCAB_HPP
#define DRIVEGEN_VOCAB_HPP

// Closed vocabulary for the toy prompt language.  The word list is built
// from the world configuration (prompt template words, locations,
// attribute words, object class names) in a documented order so a
// serialized vocabulary re-tokenizes prompts identically across runs.

#include <map>
#include <string>
#include <vector>

#include "scene.hpp"

namespace dg {

class Vocabulary {
  public:
    // Word order: prompt template words, then locations, then attribute
    // words (weather, time of day), then object class names; duplicates
    // keep their first position.
    static Vocabulary from_world(const WorldConfig& config);

    // From an explicit word list (checkpoint restore).
    static Vocabulary from_words(std::vector<std::string> words, int max_len);

    int size() const { return int(words_.size()); }
    int max_len() const { return max_len_; }
    const std::vector<std::string>& words() const { return words_; }

    // Lowercases, strips '.' and ',', splits on whitespace.  Any word
    // outside the vocabulary is an error naming the word.
    std::vector<int> tokenize(const std::string& text) const;

    int index_of(const std::string& word) const;  // error if unknown

  private:
    std::vector<std::string> words_;
    std::map<std::string, int> index_;
    int max_len_ = 0;
};

// Tokenizer normalization shared with Vocabulary::tokenize.
std::vector<std::string> split_words(const std::string& text);

}  // namespace dg

#endif
