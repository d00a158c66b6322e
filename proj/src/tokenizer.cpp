#include "peftlad/tokenizer.hpp"

#include <algorithm>
#include <istream>
#include <ostream>
#include <sstream>

#include <json.hpp>

#include "peftlad/errors.hpp"

namespace peftlad {

ModelStyle parse_model_style(const std::string& name) {
    if (name == "masked") return ModelStyle::masked;
    if (name == "autoregressive") return ModelStyle::autoregressive;
    throw ConfigError("unknown model style '" + name + "' (expected masked or autoregressive)");
}

std::string model_style_name(ModelStyle style) {
    return style == ModelStyle::masked ? "masked" : "autoregressive";
}

Vocabulary::Vocabulary(std::unordered_map<std::string, int> token_to_id, std::size_t max_len)
    : token_to_id_(std::move(token_to_id)), max_len_(max_len) {
    if (max_len_ == 0) throw ConfigError("vocabulary max_len must be at least 1");
    auto expect = [this](const char* token, int id) {
        auto it = token_to_id_.find(token);
        if (it == token_to_id_.end() || it->second != id) {
            throw ConfigError(std::string("vocabulary is missing reserved token ") + token + " at id " +
                              std::to_string(id));
        }
    };
    expect(PAD_TOKEN, PAD);
    expect(UNK_TOKEN, UNK);
    expect(CLS_TOKEN, CLS);
}

Vocabulary Vocabulary::build(const std::vector<std::string>& train_texts, std::size_t min_count,
                             std::size_t max_len) {
    std::unordered_map<std::string, std::size_t> counts;
    std::istringstream stream;
    std::string token;
    for (const std::string& text : train_texts) {
        stream.clear();
        stream.str(text);
        while (stream >> token) ++counts[token];
    }
    if (counts.empty()) throw ConfigError("cannot build a vocabulary from an empty training corpus");

    std::vector<std::pair<std::string, std::size_t>> ranked;
    ranked.reserve(counts.size());
    for (auto& [tok, count] : counts) {
        if (count >= min_count) ranked.emplace_back(tok, count);
    }
    std::sort(ranked.begin(), ranked.end(), [](const auto& a, const auto& b) {
        if (a.second != b.second) return a.second > b.second;
        return a.first < b.first;
    });

    std::unordered_map<std::string, int> token_to_id;
    token_to_id.emplace(PAD_TOKEN, PAD);
    token_to_id.emplace(UNK_TOKEN, UNK);
    token_to_id.emplace(CLS_TOKEN, CLS);
    int next_id = 3;
    for (auto& [tok, count] : ranked) token_to_id.emplace(std::move(tok), next_id++);
    return Vocabulary(std::move(token_to_id), max_len);
}

int Vocabulary::id_of(const std::string& token) const {
    auto it = token_to_id_.find(token);
    return it == token_to_id_.end() ? UNK : it->second;
}

void Vocabulary::save(std::ostream& out) const {
    nlohmann::json doc;
    for (const auto& [token, id] : token_to_id_) {
        if (token == "max_len") {
            throw IoError("vocabulary contains a literal 'max_len' token, which collides with the "
                          "persistence format");
        }
        doc[token] = id;
    }
    doc["max_len"] = max_len_;
    out << doc.dump(2) << '\n';
}

Vocabulary Vocabulary::load(std::istream& in) {
    nlohmann::json doc;
    try {
        in >> doc;
    } catch (const nlohmann::json::exception& e) {
        throw IoError(std::string("vocabulary file is not valid JSON: ") + e.what());
    }
    if (!doc.is_object() || !doc.contains("max_len")) {
        throw IoError("vocabulary file must be a JSON object with a max_len entry");
    }
    std::unordered_map<std::string, int> token_to_id;
    std::size_t max_len = 0;
    for (auto& [key, value] : doc.items()) {
        if (key == "max_len") {
            max_len = value.get<std::size_t>();
        } else {
            token_to_id[key] = value.get<int>();
        }
    }
    return Vocabulary(std::move(token_to_id), max_len);
}

TokenizedSequence encode(const std::string& text, const Vocabulary& vocab, ModelStyle style) {
    TokenizedSequence seq;
    if (style == ModelStyle::masked) seq.ids.push_back(Vocabulary::CLS);
    std::istringstream stream(text);
    std::string token;
    while (stream >> token && seq.ids.size() < vocab.max_len()) {
        seq.ids.push_back(vocab.id_of(token));
    }
    if (seq.ids.empty() || (style == ModelStyle::masked && seq.ids.size() == 1)) {
        throw InputError("cannot encode an empty text");
    }
    seq.mask.assign(seq.ids.size(), 1);
    seq.selected_index = style == ModelStyle::masked ? 0 : seq.ids.size() - 1;
    return seq;
}

void pad_to(TokenizedSequence& seq, std::size_t target_len) {
    if (seq.ids.size() >= target_len) return;
    seq.ids.resize(target_len, Vocabulary::PAD);
    seq.mask.resize(target_len, 0);
}

std::vector<TokenizedSequence> encode_batch(const std::vector<std::string>& texts, const Vocabulary& vocab,
                                            ModelStyle style) {
    std::vector<TokenizedSequence> batch;
    batch.reserve(texts.size());
    std::size_t longest = 0;
    for (const std::string& text : texts) {
        batch.push_back(encode(text, vocab, style));
        longest = std::max(longest, batch.back().ids.size());
    }
    for (TokenizedSequence& seq : batch) pad_to(seq, longest);
    return batch;
}

} // namespace peftlad
