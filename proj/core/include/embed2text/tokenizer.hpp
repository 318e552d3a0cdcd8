#pragma once

#include <memory>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace embed2text {

// A tokenized text plus its detokenized string form. The string is the
// canonical ground truth for all reconstruction metrics.
struct TokenSequence {
  std::vector<int> ids;
  std::string text;

  bool operator==(const TokenSequence& other) const { return ids == other.ids; }
};

// Tokenizers are pure and reversible on their own output:
// decode(encode(s)) is canonical, encode(decode(ids)) == ids.
class Tokenizer {
 public:
  virtual ~Tokenizer() = default;

  virtual std::string id() const = 0;
  // Base vocabulary size, excluding the pad/bos/eos specials appended after it.
  virtual int base_vocab() const = 0;
  virtual std::vector<int> encode(std::string_view text) const = 0;
  virtual std::string decode(std::span<const int> ids) const = 0;

  int vocab_size() const { return base_vocab() + 3; }
  int pad_id() const { return base_vocab(); }
  int bos_id() const { return base_vocab() + 1; }
  int eos_id() const { return base_vocab() + 2; }

  TokenSequence make_sequence(std::string_view text) const {
    TokenSequence seq;
    seq.ids = encode(text);
    seq.text = decode(seq.ids);
    return seq;
  }

  TokenSequence from_ids(std::vector<int> ids) const {
    TokenSequence seq;
    seq.text = decode(ids);
    seq.ids = std::move(ids);
    return seq;
  }

  // decode(encode(text)) — the canonical string compared by exact-match.
  std::string canonicalize(std::string_view text) const { return decode(encode(text)); }
};

// "bytes": one token per byte, base vocabulary 256, lossless round-trip.
std::shared_ptr<const Tokenizer> make_tokenizer(const std::string& tokenizer_id);

// Truncate to at most max_tokens tokens; idempotent.
TokenSequence truncate_tokens(const Tokenizer& tok, const TokenSequence& seq, int max_tokens);

// Whitespace word split used by word-level metrics (BLEU, token F1 in word
// mode, name recovery, frequency buckets). Independent of the model tokenizer.
std::vector<std::string> split_words(std::string_view text);

}  // namespace embed2text
