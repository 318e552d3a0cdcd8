#include "embed2text/tokenizer.hpp"

#include "embed2text/common.hpp"

namespace embed2text {

namespace {

class ByteTokenizer final : public Tokenizer {
 public:
  std::string id() const override { return "bytes"; }
  int base_vocab() const override { return 256; }

  std::vector<int> encode(std::string_view text) const override {
    std::vector<int> ids;
    ids.reserve(text.size());
    for (unsigned char c : text) ids.push_back(int(c));
    return ids;
  }

  std::string decode(std::span<const int> ids) const override {
    std::string out;
    out.reserve(ids.size());
    for (int id : ids) {
      if (id < 0 || id >= vocab_size()) throw ContractError("bytes tokenizer: id out of range");
      if (id >= base_vocab()) continue;  // specials dropped
      out.push_back(char(static_cast<unsigned char>(id)));
    }
    return out;
  }
};

}  // namespace

std::shared_ptr<const Tokenizer> make_tokenizer(const std::string& tokenizer_id) {
  if (tokenizer_id == "bytes") return std::make_shared<ByteTokenizer>();
  throw ConfigError("unknown tokenizer: '" + tokenizer_id + "'");
}

TokenSequence truncate_tokens(const Tokenizer& tok, const TokenSequence& seq, int max_tokens) {
  if (max_tokens < 0) throw ContractError("truncate_tokens: negative budget");
  if (static_cast<int>(seq.ids.size()) <= max_tokens) return seq;
  std::vector<int> ids(seq.ids.begin(), seq.ids.begin() + max_tokens);
  return tok.from_ids(std::move(ids));
}

std::vector<std::string> split_words(std::string_view text) {
  std::vector<std::string> words;
  size_t i = 0;
  while (i < text.size()) {
    while (i < text.size() && std::isspace(static_cast<unsigned char>(text[i]))) ++i;
    size_t j = i;
    while (j < text.size() && !std::isspace(static_cast<unsigned char>(text[j]))) ++j;
    if (j > i) words.emplace_back(text.substr(i, j - i));
    i = j;
  }
  return words;
}

}  // namespace embed2text
