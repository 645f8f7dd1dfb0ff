#include "vocab.hpp"

#include <algorithm>
#include <cctype>

namespace dg {

std::vector<std::string> split_words(const std::string& text) {
    std::vector<std::string> out;
    std::string cur;
    auto flush = [&] {
        if (!cur.empty()) {
            out.push_back(cur);
            cur.clear();
        }
    };
    for (char c : text) {
        if (std::isspace(static_cast<unsigned char>(c))) {
            flush();
            continue;
        }
        if (c == '.' || c == ',') continue;
        cur.push_back(char(std::tolower(static_cast<unsigned char>(c))));
    }
    flush();
    return out;
}

Vocabulary Vocabulary::from_world(const WorldConfig& config) {
    std::vector<std::string> raw = {"a", "driving", "scene", "image", "at"};
    for (const auto& loc : config.locations) raw.push_back(loc);
    raw.insert(raw.end(), {"sunny", "rain", "day", "night"});
    for (const auto& oc : config.object_classes)
        for (const auto& w : split_words(oc.name)) raw.push_back(w);

    std::vector<std::string> dedup;
    for (auto& w : raw) {
        std::string norm;
        for (const auto& part : split_words(w)) {
            require(norm.empty(), ErrorKind::Format,
                    "vocabulary entry \"" + w + "\" is not a single word");
            norm = part;
        }
        require(!norm.empty(), ErrorKind::Format, "empty vocabulary entry");
        if (std::find(dedup.begin(), dedup.end(), norm) == dedup.end())
            dedup.push_back(norm);
    }
    return from_words(std::move(dedup), 16);
}

Vocabulary Vocabulary::from_words(std::vector<std::string> words, int max_len) {
    require(max_len >= 1, ErrorKind::InvalidArgument, "max_len must be positive");
    Vocabulary v;
    v.max_len_ = max_len;
    for (const auto& w : words) {
        require(v.index_.find(w) == v.index_.end(), ErrorKind::Format,
                "duplicate vocabulary word \"" + w + "\"");
        v.index_[w] = int(v.words_.size());
        v.words_.push_back(w);
    }
    return v;
}

int Vocabulary::index_of(const std::string& word) const {
    auto it = index_.find(word);
    require(it != index_.end(), ErrorKind::InvalidArgument,
            "word \"" + word + "\" is not in the vocabulary");
    return it->second;
}

std::vector<int> Vocabulary::tokenize(const std::string& text) const {
    std::vector<int> ids;
    for (const auto& w : split_words(text)) ids.push_back(index_of(w));
    require(int(ids.size()) <= max_len_, ErrorKind::Capacity,
            "prompt has " + std::to_string(ids.size()) + " tokens; vocabulary max_len is " +
                std::to_string(max_len_));
    return ids;
}

}  // namespace dg
