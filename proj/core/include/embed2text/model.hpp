#pragma once

#include <optional>
#include <span>
#include <string>
#include <vector>

#include "embed2text/nn.hpp"
#include "embed2text/rng.hpp"

namespace embed2text {

using nn::Mat;
using nn::Vec;

// Architecture of one inversion model (base or corrector). Both roles share
// the same shape: an encoder-decoder transformer whose encoder reads
// 3*proj_len projected conditioning positions followed by the hypothesis
// tokens, and whose decoder emits the reconstruction.
struct InverterConfig {
  std::string tokenizer_id = "bytes";
  int vocab = 259;        // tokenizer base vocab + pad/bos/eos
  int d_embedding = 32;   // dimension of the inverted embedder
  int d_enc = 64;         // transformer width
  int enc_layers = 2;
  int dec_layers = 2;
  int heads = 4;
  int d_ffn = 128;
  int proj_len = 16;      // s: positions each conditioning vector projects to
  int max_tokens = 8;     // token budget for hypotheses and reconstructions
  uint64_t seed = 1;
  std::string embedder_model_id;

  int enc_len() const { return 3 * proj_len + max_tokens; }
  int dec_len() const { return max_tokens + 1; }  // BOS + tokens; targets end with EOS
  void validate() const;
};

// EmbToSeq(e) = reshape(W2 * gelu(W1 * e)) into proj_len rows of d_enc.
struct ProjectionHead {
  Mat w1;  // d x d
  Mat w2;  // (s * d_enc) x d
  int proj_len = 0;  // s
  int d_enc = 0;
};

struct EncoderBlock {
  nn::LayerNormParams ln1;
  nn::Linear q, k, v, o;
  nn::LayerNormParams ln2;
  nn::Linear ff1, ff2;
};

struct DecoderBlock {
  nn::LayerNormParams ln1;
  nn::Linear sq, sk, sv, so;  // self-attention
  nn::LayerNormParams ln2;
  nn::Linear cq, ck, cv, co;  // cross-attention
  nn::LayerNormParams ln3;
  nn::Linear ff1, ff2;
};

// Three independent projection heads: target embedding e, hypothesis
// re-embedding, and their difference.
struct ModelParams {
  Mat tok_emb;  // vocab x d_enc (encoder hypothesis tokens and decoder inputs)
  Mat pos_enc;  // enc_len x d_enc
  Mat pos_dec;  // dec_len x d_enc
  ProjectionHead head_target, head_hyp, head_diff;
  std::vector<EncoderBlock> enc;
  nn::LayerNormParams enc_ln_final;
  std::vector<DecoderBlock> dec;
  nn::LayerNormParams dec_ln_final;
  nn::Linear lm_head;  // d_enc x vocab
};

// Flat list of every parameter matrix, in a fixed order shared by the
// optimizer, checkpoints and gradient buffers.
std::vector<Mat*> param_list(ModelParams& p);
std::vector<const Mat*> param_list(const ModelParams& p);
ModelParams zeros_like(const ModelParams& p);
long param_count(const ModelParams& p);

// One conditioned training pair. The base role uses an empty hypothesis with
// hyp_emb = phi(empty); the corrector role uses a generated hypothesis and
// its re-embedding.
struct ConditionedExample {
  Vec target_emb;
  Vec hyp_emb;
  bool has_feedback = true;  // false: hypothesis-embedding segments are zeroed
  std::vector<int> hyp_ids;
  std::vector<int> target_ids;
};

struct ScoredTokens {
  std::vector<int> ids;
  double logprob = 0.0;
};

// Projects one embedding into proj_len encoder positions.
Mat emb_to_seq(const ProjectionHead& head, const Vec& e);
// Backward of a scalar loss through emb_to_seq: accumulates head gradients,
// returns d(loss)/d(e).
Vec emb_to_seq_bwd(const ProjectionHead& head, const Vec& e, const Mat& d_out,
                   ProjectionHead& grad);

// Conditioning assembly: EmbToSeq(e), EmbToSeq(e_hyp), EmbToSeq(e - e_hyp),
// then the hypothesis token embeddings — (3s + n) rows of d_enc. When e_hyp
// is absent (feedback disabled) the second and third segments are zero rows.
Mat assemble_corrector_input(const ModelParams& params, const InverterConfig& cfg, const Vec& e,
                             const std::optional<Vec>& e_hyp, std::span<const int> hyp_ids);

class InversionModel {
 public:
  explicit InversionModel(InverterConfig cfg);
  InversionModel(InverterConfig cfg, ModelParams params);

  const InverterConfig& config() const { return cfg_; }
  ModelParams& params() { return params_; }
  const ModelParams& params() const { return params_; }

  struct BatchResult {
    double loss_sum = 0.0;  // summed token NLL
    long tokens = 0;
    long correct = 0;       // argmax token matches

    double mean_loss() const { return tokens > 0 ? loss_sum / double(tokens) : 0.0; }
    double token_accuracy() const { return tokens > 0 ? double(correct) / double(tokens) : 0.0; }
  };

  // Teacher-forced NLL over the batch; accumulates parameter gradients.
  BatchResult forward_backward(std::span<const ConditionedExample> batch,
                               ModelParams& grads) const;
  BatchResult forward_only(std::span<const ConditionedExample> batch) const;

  // Inference: encode conditioning once, then decode.
  Mat encode(const Vec& e, const std::optional<Vec>& e_hyp, std::span<const int> hyp_ids) const;
  // Token-level beam search; width 1 is greedy argmax decoding. Returns up to
  // num_return sequences ordered by total log-probability.
  std::vector<ScoredTokens> decode_beam(const Mat& memory, int width, int num_return) const;
  std::vector<ScoredTokens> decode_nucleus(const Mat& memory, double top_p, int num_return,
                                           Rng& rng) const;

 private:
  InverterConfig cfg_;
  ModelParams params_;
};

}  // namespace embed2text
