#pragma once

#include <cstddef>
#include <iosfwd>
#include <string>
#include <unordered_map>
#include <vector>

namespace peftlad {

enum class ModelStyle { masked, autoregressive };

ModelStyle parse_model_style(const std::string& name); // "masked" | "autoregressive"
std::string model_style_name(ModelStyle style);

// Word-level whitespace vocabulary built from training text only. Reserved
// ids 0..2 are fixed; real tokens get ids from 3 by descending frequency,
// ties broken lexicographically.
class Vocabulary {
public:
    static constexpr int PAD = 0;
    static constexpr int UNK = 1;
    static constexpr int CLS = 2;
    static constexpr const char* PAD_TOKEN = "<pad>";
    static constexpr const char* UNK_TOKEN = "<unk>";
    static constexpr const char* CLS_TOKEN = "<cls>";

    Vocabulary() = default;
    Vocabulary(std::unordered_map<std::string, int> token_to_id, std::size_t max_len);

    static Vocabulary build(const std::vector<std::string>& train_texts, std::size_t min_count = 1,
                            std::size_t max_len = 256);

    int id_of(const std::string& token) const; // UNK when absent
    std::size_t size() const { return token_to_id_.size(); }
    std::size_t max_len() const { return max_len_; }
    const std::unordered_map<std::string, int>& tokens() const { return token_to_id_; }

    void save(std::ostream& out) const; // JSON {token: id..., "max_len": n}
    static Vocabulary load(std::istream& in);

private:
    std::unordered_map<std::string, int> token_to_id_;
    std::size_t max_len_ = 256;
};

// Fixed-contract encoded sequence. mask[i] is 0 exactly at PAD positions;
// selected_index points at the CLS token (masked style) or the last real
// token (autoregressive style) and always indexes a non-PAD position.
struct TokenizedSequence {
    std::vector<int> ids;
    std::vector<int> mask;
    std::size_t selected_index = 0;
    int label = 0;
};

// Encodes one text: masked style prepends CLS, unknown tokens become UNK,
// and the result is truncated to max_len keeping the earliest tokens.
TokenizedSequence encode(const std::string& text, const Vocabulary& vocab, ModelStyle style);

// Encodes a batch and pads every row with PAD to the longest row's length.
std::vector<TokenizedSequence> encode_batch(const std::vector<std::string>& texts, const Vocabulary& vocab,
                                            ModelStyle style);

// Pads one encoded sequence out to target_len (no-op when already there).
void pad_to(TokenizedSequence& seq, std::size_t target_len);

} // namespace peftlad
