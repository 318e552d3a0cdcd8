#include "embed2text/model.hpp"

#include <algorithm>
#include <cmath>

#include "embed2text/common.hpp"

namespace embed2text {

using nn::AttnCoreCache;
using nn::LayerNormCache;
using nn::MaskSpec;

void InverterConfig::validate() const {
  if (vocab < 4) throw ConfigError("inverter config: vocab too small");
  if (d_embedding <= 0) throw ConfigError("inverter config: d_embedding must be > 0");
  if (d_enc <= 0 || d_enc % heads != 0) {
    throw ConfigError("inverter config: d_enc must be a positive multiple of heads");
  }
  if (enc_layers < 1 || dec_layers < 1) throw ConfigError("inverter config: need >= 1 layer");
  if (proj_len < 1) throw ConfigError("inverter config: proj_len (s) must be >= 1");
  if (max_tokens < 1) throw ConfigError("inverter config: max_tokens must be >= 1");
  if (d_ffn < 1) throw ConfigError("inverter config: d_ffn must be >= 1");
}

namespace {

void init_mat(Mat& m, Eigen::Index rows, Eigen::Index cols, Rng& rng, double std_dev) {
  m.resize(rows, cols);
  for (Eigen::Index j = 0; j < cols; ++j) {
    for (Eigen::Index i = 0; i < rows; ++i) m(i, j) = std_dev * rng.next_gauss();
  }
}

void init_linear(nn::Linear& lin, int in, int out, Rng& rng) {
  const double std_dev = std::sqrt(2.0 / double(in + out));
  init_mat(lin.w, in, out, rng, std_dev);
  lin.b = Mat::Zero(1, out);
}

void init_layernorm(nn::LayerNormParams& ln, int dim) {
  ln.gamma = Mat::Ones(1, dim);
  ln.beta = Mat::Zero(1, dim);
}

void init_head(ProjectionHead& head, const InverterConfig& cfg, Rng& rng) {
  const int d = cfg.d_embedding;
  const int out = cfg.proj_len * cfg.d_enc;
  init_mat(head.w1, d, d, rng, std::sqrt(2.0 / double(d + d)));
  init_mat(head.w2, out, d, rng, std::sqrt(2.0 / double(out + d)));
  head.proj_len = cfg.proj_len;
  head.d_enc = cfg.d_enc;
}

ModelParams init_params(const InverterConfig& cfg) {
  Rng rng(splitmix64(cfg.seed ^ 0x10de1));
  ModelParams p;
  init_mat(p.tok_emb, cfg.vocab, cfg.d_enc, rng, 0.02);
  init_mat(p.pos_enc, cfg.enc_len(), cfg.d_enc, rng, 0.02);
  init_mat(p.pos_dec, cfg.dec_len(), cfg.d_enc, rng, 0.02);
  init_head(p.head_target, cfg, rng);
  init_head(p.head_hyp, cfg, rng);
  init_head(p.head_diff, cfg, rng);
  p.enc.resize(size_t(cfg.enc_layers));
  for (auto& blk : p.enc) {
    init_layernorm(blk.ln1, cfg.d_enc);
    init_linear(blk.q, cfg.d_enc, cfg.d_enc, rng);
    init_linear(blk.k, cfg.d_enc, cfg.d_enc, rng);
    init_linear(blk.v, cfg.d_enc, cfg.d_enc, rng);
    init_linear(blk.o, cfg.d_enc, cfg.d_enc, rng);
    init_layernorm(blk.ln2, cfg.d_enc);
    init_linear(blk.ff1, cfg.d_enc, cfg.d_ffn, rng);
    init_linear(blk.ff2, cfg.d_ffn, cfg.d_enc, rng);
  }
  init_layernorm(p.enc_ln_final, cfg.d_enc);
  p.dec.resize(size_t(cfg.dec_layers));
  for (auto& blk : p.dec) {
    init_layernorm(blk.ln1, cfg.d_enc);
    init_linear(blk.sq, cfg.d_enc, cfg.d_enc, rng);
    init_linear(blk.sk, cfg.d_enc, cfg.d_enc, rng);
    init_linear(blk.sv, cfg.d_enc, cfg.d_enc, rng);
    init_linear(blk.so, cfg.d_enc, cfg.d_enc, rng);
    init_layernorm(blk.ln2, cfg.d_enc);
    init_linear(blk.cq, cfg.d_enc, cfg.d_enc, rng);
    init_linear(blk.ck, cfg.d_enc, cfg.d_enc, rng);
    init_linear(blk.cv, cfg.d_enc, cfg.d_enc, rng);
    init_linear(blk.co, cfg.d_enc, cfg.d_enc, rng);
    init_layernorm(blk.ln3, cfg.d_enc);
    init_linear(blk.ff1, cfg.d_enc, cfg.d_ffn, rng);
    init_linear(blk.ff2, cfg.d_ffn, cfg.d_enc, rng);
  }
  init_layernorm(p.dec_ln_final, cfg.d_enc);
  init_linear(p.lm_head, cfg.d_enc, cfg.vocab, rng);
  return p;
}

template <typename Params, typename MatPtr>
std::vector<MatPtr> param_list_impl(Params& p) {
  std::vector<MatPtr> out;
  out.push_back(&p.tok_emb);
  out.push_back(&p.pos_enc);
  out.push_back(&p.pos_dec);
  for (auto* head : {&p.head_target, &p.head_hyp, &p.head_diff}) {
    out.push_back(&head->w1);
    out.push_back(&head->w2);
  }
  for (auto& blk : p.enc) {
    out.push_back(&blk.ln1.gamma);
    out.push_back(&blk.ln1.beta);
    for (auto* lin : {&blk.q, &blk.k, &blk.v, &blk.o, &blk.ff1, &blk.ff2}) {
      out.push_back(&lin->w);
      out.push_back(&lin->b);
    }
    out.push_back(&blk.ln2.gamma);
    out.push_back(&blk.ln2.beta);
  }
  out.push_back(&p.enc_ln_final.gamma);
  out.push_back(&p.enc_ln_final.beta);
  for (auto& blk : p.dec) {
    out.push_back(&blk.ln1.gamma);
    out.push_back(&blk.ln1.beta);
    for (auto* lin :
         {&blk.sq, &blk.sk, &blk.sv, &blk.so, &blk.cq, &blk.ck, &blk.cv, &blk.co, &blk.ff1,
          &blk.ff2}) {
      out.push_back(&lin->w);
      out.push_back(&lin->b);
    }
    out.push_back(&blk.ln2.gamma);
    out.push_back(&blk.ln2.beta);
    out.push_back(&blk.ln3.gamma);
    out.push_back(&blk.ln3.beta);
  }
  out.push_back(&p.dec_ln_final.gamma);
  out.push_back(&p.dec_ln_final.beta);
  out.push_back(&p.lm_head.w);
  out.push_back(&p.lm_head.b);
  return out;
}

}  // namespace

std::vector<Mat*> param_list(ModelParams& p) { return param_list_impl<ModelParams, Mat*>(p); }
std::vector<const Mat*> param_list(const ModelParams& p) {
  return param_list_impl<const ModelParams, const Mat*>(p);
}

ModelParams zeros_like(const ModelParams& p) {
  ModelParams z = p;
  for (Mat* m : param_list(z)) m->setZero();
  return z;
}

long param_count(const ModelParams& p) {
  long n = 0;
  for (const Mat* m : param_list(p)) n += long(m->size());
  return n;
}

Mat emb_to_seq(const ProjectionHead& head, const Vec& e) {
  if (e.size() != head.w1.cols()) throw ContractError("emb_to_seq: embedding dimension mismatch");
  if (head.w2.rows() != Eigen::Index(head.proj_len) * head.d_enc) {
    throw ContractError("emb_to_seq: head shape does not match proj_len * d_enc");
  }
  const Vec h = nn::gelu_fwd(head.w1 * e);
  const Vec z = head.w2 * h;  // (s * d_enc)
  Mat out(head.proj_len, head.d_enc);
  for (int i = 0; i < head.proj_len; ++i) {
    out.row(i) = z.segment(Eigen::Index(i) * head.d_enc, head.d_enc).transpose();
  }
  return out;
}

Vec emb_to_seq_bwd(const ProjectionHead& head, const Vec& e, const Mat& d_out,
                   ProjectionHead& grad) {
  const Vec pre = head.w1 * e;
  const Vec h = nn::gelu_fwd(pre);
  // flatten d_out rows back into the (s * d_enc) vector layout
  Vec dz(d_out.size());
  const Eigen::Index d_enc = d_out.cols();
  for (Eigen::Index i = 0; i < d_out.rows(); ++i) {
    dz.segment(i * d_enc, d_enc) = d_out.row(i).transpose();
  }
  grad.w2.noalias() += dz * h.transpose();
  const Vec dh = head.w2.transpose() * dz;
  const Vec dpre = nn::gelu_bwd(pre, dh);
  grad.w1.noalias() += dpre * e.transpose();
  return head.w1.transpose() * dpre;
}

Mat assemble_corrector_input(const ModelParams& params, const InverterConfig& cfg, const Vec& e,
                             const std::optional<Vec>& e_hyp, std::span<const int> hyp_ids) {
  if (e.size() != cfg.d_embedding) {
    throw ContractError("assemble_corrector_input: target embedding dimension mismatch");
  }
  if (e_hyp && e_hyp->size() != cfg.d_embedding) {
    throw ContractError("assemble_corrector_input: hypothesis embedding dimension mismatch");
  }
  const int s = cfg.proj_len;
  const int n = int(hyp_ids.size());
  Mat out = Mat::Zero(3 * s + n, cfg.d_enc);
  out.topRows(s) = emb_to_seq(params.head_target, e);
  if (e_hyp) {
    out.middleRows(s, s) = emb_to_seq(params.head_hyp, *e_hyp);
    out.middleRows(2 * s, s) = emb_to_seq(params.head_diff, e - *e_hyp);
  }
  // feedback disabled: hypothesis-embedding segments stay zero rows
  for (int j = 0; j < n; ++j) {
    const int id = hyp_ids[size_t(j)];
    if (id < 0 || id >= cfg.vocab) throw ContractError("assemble_corrector_input: token id out of range");
    out.row(3 * s + j) = params.tok_emb.row(id);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Training pass over a packed batch. Sequences keep their exact lengths; all
// position-wise ops run on row-concatenated matrices and attention slices
// per-example blocks.
// ---------------------------------------------------------------------------

namespace {

struct Packing {
  std::vector<Eigen::Index> enc_off, dec_off;
  std::vector<int> enc_len, dec_len;
  Eigen::Index enc_total = 0, dec_total = 0;
};

struct AttnPassCache {
  Mat q, k, v;                       // packed projections
  std::vector<AttnCoreCache> cores;  // B * heads
  Mat concat;                        // packed head outputs, pre-O
};

struct EncLayerCache {
  Mat x_in;
  LayerNormCache ln1c;
  Mat h1;
  AttnPassCache attn;
  Mat x_mid;
  LayerNormCache ln2c;
  Mat h2;
  Mat ff_pre, ff_act;
};

struct DecLayerCache {
  Mat x_in;
  LayerNormCache ln1c;
  Mat h1;
  AttnPassCache self_attn;
  Mat x_mid;
  LayerNormCache ln2c;
  Mat h2;
  AttnPassCache cross_attn;  // k,v from memory
  Mat x_mid2;
  LayerNormCache ln3c;
  Mat h3;
  Mat ff_pre, ff_act;
};

struct HeadCache {
  Mat input;  // B x d
  Mat pre;    // B x d (pre-gelu)
  Mat act;    // B x d
  Mat z;      // B x (s*d_enc)
};

HeadCache head_forward(const ProjectionHead& head, const Mat& input) {
  HeadCache c;
  c.input = input;
  c.pre = input * head.w1.transpose();
  c.act = nn::gelu_fwd(c.pre);
  c.z = c.act * head.w2.transpose();
  return c;
}

void head_backward(const ProjectionHead& head, const HeadCache& c, const Mat& dz,
                   ProjectionHead& g) {
  g.w2.noalias() += dz.transpose() * c.act;
  const Mat dact = dz * head.w2;
  const Mat dpre = nn::gelu_bwd(c.pre, dact);
  g.w1.noalias() += dpre.transpose() * c.input;
}

}  // namespace

InversionModel::InversionModel(InverterConfig cfg) : cfg_(std::move(cfg)) {
  cfg_.validate();
  params_ = init_params(cfg_);
}

InversionModel::InversionModel(InverterConfig cfg, ModelParams params)
    : cfg_(std::move(cfg)), params_(std::move(params)) {
  cfg_.validate();
}

namespace {

// Shared forward (and optional backward) over one batch.
InversionModel::BatchResult run_batch(const InverterConfig& cfg, const ModelParams& P,
                                      std::span<const ConditionedExample> batch,
                                      ModelParams* G) {
  const int B = int(batch.size());
  if (B == 0) return {};
  const int d = cfg.d_embedding;
  const int d_enc = cfg.d_enc;
  const int s = cfg.proj_len;
  const int heads = cfg.heads;
  const int dh = d_enc / heads;
  const int eos = cfg.vocab - 1;
  const int bos = cfg.vocab - 2;

  Packing pk;
  pk.enc_off.resize(size_t(B));
  pk.dec_off.resize(size_t(B));
  pk.enc_len.resize(size_t(B));
  pk.dec_len.resize(size_t(B));
  for (int b = 0; b < B; ++b) {
    const auto& ex = batch[size_t(b)];
    if (int(ex.hyp_ids.size()) > cfg.max_tokens) {
      throw ContractError("training example hypothesis exceeds max_tokens");
    }
    if (int(ex.target_ids.size()) > cfg.max_tokens) {
      throw ContractError("training example target exceeds max_tokens");
    }
    if (ex.target_emb.size() != d) throw ContractError("training example embedding dim mismatch");
    pk.enc_off[size_t(b)] = pk.enc_total;
    pk.dec_off[size_t(b)] = pk.dec_total;
    pk.enc_len[size_t(b)] = 3 * s + int(ex.hyp_ids.size());
    pk.dec_len[size_t(b)] = int(ex.target_ids.size()) + 1;  // BOS + targets
    pk.enc_total += pk.enc_len[size_t(b)];
    pk.dec_total += pk.dec_len[size_t(b)];
  }

  // Conditioning projections, batched across examples.
  Mat E(B, d), Ehat(B, d), Ediff(B, d);
  std::vector<char> fb(static_cast<size_t>(B), 0);
  for (int b = 0; b < B; ++b) {
    const auto& ex = batch[size_t(b)];
    E.row(b) = ex.target_emb.transpose();
    fb[size_t(b)] = ex.has_feedback;
    if (ex.has_feedback) {
      if (ex.hyp_emb.size() != d) throw ContractError("hypothesis embedding dim mismatch");
      Ehat.row(b) = ex.hyp_emb.transpose();
    } else {
      Ehat.row(b).setZero();
    }
  }
  Ediff = E - Ehat;
  HeadCache ct = head_forward(P.head_target, E);
  HeadCache ch = head_forward(P.head_hyp, Ehat);
  HeadCache cd = head_forward(P.head_diff, Ediff);
  for (int b = 0; b < B; ++b) {
    if (!fb[size_t(b)]) {
      ch.z.row(b).setZero();
      cd.z.row(b).setZero();
    }
  }

  // Encoder input.
  Mat enc_x(pk.enc_total, d_enc);
  for (int b = 0; b < B; ++b) {
    const auto& ex = batch[size_t(b)];
    const Eigen::Index off = pk.enc_off[size_t(b)];
    for (int i = 0; i < s; ++i) {
      enc_x.row(off + i) = ct.z.row(b).segment(Eigen::Index(i) * d_enc, d_enc);
      enc_x.row(off + s + i) = ch.z.row(b).segment(Eigen::Index(i) * d_enc, d_enc);
      enc_x.row(off + 2 * s + i) = cd.z.row(b).segment(Eigen::Index(i) * d_enc, d_enc);
    }
    for (size_t j = 0; j < ex.hyp_ids.size(); ++j) {
      enc_x.row(off + 3 * s + Eigen::Index(j)) = P.tok_emb.row(ex.hyp_ids[j]);
    }
    enc_x.middleRows(off, pk.enc_len[size_t(b)]) += P.pos_enc.topRows(pk.enc_len[size_t(b)]);
  }

  const auto run_attention = [&](const nn::Linear& lq, const nn::Linear& lk, const nn::Linear& lv,
                                 const Mat& q_in, const Mat& kv_in,
                                 const std::vector<Eigen::Index>& q_off,
                                 const std::vector<int>& q_len,
                                 const std::vector<Eigen::Index>& kv_off,
                                 const std::vector<int>& kv_len, bool causal,
                                 AttnPassCache& cache) {
    cache.q = nn::linear_fwd(lq, q_in);
    cache.k = nn::linear_fwd(lk, kv_in);
    cache.v = nn::linear_fwd(lv, kv_in);
    cache.cores.assign(size_t(B) * size_t(heads), AttnCoreCache{});
    cache.concat.resize(q_in.rows(), d_enc);
    for (int b = 0; b < B; ++b) {
      for (int h = 0; h < heads; ++h) {
        const Mat qb = cache.q.block(q_off[size_t(b)], Eigen::Index(h) * dh, q_len[size_t(b)], dh);
        const Mat kb =
            cache.k.block(kv_off[size_t(b)], Eigen::Index(h) * dh, kv_len[size_t(b)], dh);
        const Mat vb =
            cache.v.block(kv_off[size_t(b)], Eigen::Index(h) * dh, kv_len[size_t(b)], dh);
        MaskSpec mask{kv_len[size_t(b)], causal};
        cache.concat.block(q_off[size_t(b)], Eigen::Index(h) * dh, q_len[size_t(b)], dh) =
            nn::attn_core_fwd(qb, kb, vb, mask, &cache.cores[size_t(b) * size_t(heads) + size_t(h)]);
      }
    }
  };

  // dq_in is filled; dkv_in is accumulated.
  const auto attention_backward = [&](const nn::Linear& lq, const nn::Linear& lk,
                                      const nn::Linear& lv, const Mat& q_in, const Mat& kv_in,
                                      const std::vector<Eigen::Index>& q_off,
                                      const std::vector<int>& q_len,
                                      const std::vector<Eigen::Index>& kv_off,
                                      const std::vector<int>& kv_len, bool causal,
                                      const AttnPassCache& cache, const Mat& dconcat,
                                      nn::Linear& gq, nn::Linear& gk, nn::Linear& gv, Mat& dq_in,
                                      Mat& dkv_in) {
    Mat dq = Mat::Zero(cache.q.rows(), cache.q.cols());
    Mat dk = Mat::Zero(cache.k.rows(), cache.k.cols());
    Mat dv = Mat::Zero(cache.v.rows(), cache.v.cols());
    for (int b = 0; b < B; ++b) {
      for (int h = 0; h < heads; ++h) {
        const Mat qb = cache.q.block(q_off[size_t(b)], Eigen::Index(h) * dh, q_len[size_t(b)], dh);
        const Mat kb =
            cache.k.block(kv_off[size_t(b)], Eigen::Index(h) * dh, kv_len[size_t(b)], dh);
        const Mat vb =
            cache.v.block(kv_off[size_t(b)], Eigen::Index(h) * dh, kv_len[size_t(b)], dh);
        const Mat doutb =
            dconcat.block(q_off[size_t(b)], Eigen::Index(h) * dh, q_len[size_t(b)], dh);
        Mat dqb = Mat::Zero(q_len[size_t(b)], dh);
        Mat dkb = Mat::Zero(kv_len[size_t(b)], dh);
        Mat dvb = Mat::Zero(kv_len[size_t(b)], dh);
        MaskSpec mask{kv_len[size_t(b)], causal};
        nn::attn_core_bwd(qb, kb, vb, cache.cores[size_t(b) * size_t(heads) + size_t(h)], doutb,
                          mask, dqb, dkb, dvb);
        dq.block(q_off[size_t(b)], Eigen::Index(h) * dh, q_len[size_t(b)], dh) = dqb;
        dk.block(kv_off[size_t(b)], Eigen::Index(h) * dh, kv_len[size_t(b)], dh) += dkb;
        dv.block(kv_off[size_t(b)], Eigen::Index(h) * dh, kv_len[size_t(b)], dh) += dvb;
      }
    }
    dq_in += nn::linear_bwd(lq, q_in, dq, gq);
    dkv_in += nn::linear_bwd(lk, kv_in, dk, gk);
    dkv_in += nn::linear_bwd(lv, kv_in, dv, gv);
  };

  // Encoder stack.
  std::vector<EncLayerCache> encC(size_t(cfg.enc_layers));
  Mat x = enc_x;
  for (int L = 0; L < cfg.enc_layers; ++L) {
    auto& c = encC[size_t(L)];
    const auto& blk = P.enc[size_t(L)];
    c.x_in = x;
    c.h1 = nn::layernorm_fwd(blk.ln1, c.x_in, &c.ln1c);
    run_attention(blk.q, blk.k, blk.v, c.h1, c.h1, pk.enc_off, pk.enc_len, pk.enc_off, pk.enc_len,
                  false, c.attn);
    c.x_mid = c.x_in + nn::linear_fwd(blk.o, c.attn.concat);
    c.h2 = nn::layernorm_fwd(blk.ln2, c.x_mid, &c.ln2c);
    c.ff_pre = nn::linear_fwd(blk.ff1, c.h2);
    c.ff_act = nn::gelu_fwd(c.ff_pre);
    x = c.x_mid + nn::linear_fwd(blk.ff2, c.ff_act);
  }
  LayerNormCache encFinalC;
  const Mat memory = nn::layernorm_fwd(P.enc_ln_final, x, &encFinalC);
  const Mat enc_pre_final = std::move(x);

  // Decoder input.
  Mat dec_x(pk.dec_total, d_enc);
  std::vector<int> dec_in_ids(size_t(pk.dec_total));
  std::vector<int> dec_targets(size_t(pk.dec_total));
  for (int b = 0; b < B; ++b) {
    const auto& ex = batch[size_t(b)];
    const Eigen::Index off = pk.dec_off[size_t(b)];
    const int m = int(ex.target_ids.size());
    for (int j = 0; j < pk.dec_len[size_t(b)]; ++j) {
      const int in_id = (j == 0) ? bos : ex.target_ids[size_t(j - 1)];
      const int tgt = (j < m) ? ex.target_ids[size_t(j)] : eos;
      dec_in_ids[size_t(off + j)] = in_id;
      dec_targets[size_t(off + j)] = tgt;
      dec_x.row(off + j) = P.tok_emb.row(in_id);
    }
    dec_x.middleRows(off, pk.dec_len[size_t(b)]) += P.pos_dec.topRows(pk.dec_len[size_t(b)]);
  }

  // Decoder stack.
  std::vector<DecLayerCache> decC(size_t(cfg.dec_layers));
  Mat y = dec_x;
  for (int L = 0; L < cfg.dec_layers; ++L) {
    auto& c = decC[size_t(L)];
    const auto& blk = P.dec[size_t(L)];
    c.x_in = y;
    c.h1 = nn::layernorm_fwd(blk.ln1, c.x_in, &c.ln1c);
    run_attention(blk.sq, blk.sk, blk.sv, c.h1, c.h1, pk.dec_off, pk.dec_len, pk.dec_off,
                  pk.dec_len, true, c.self_attn);
    c.x_mid = c.x_in + nn::linear_fwd(blk.so, c.self_attn.concat);
    c.h2 = nn::layernorm_fwd(blk.ln2, c.x_mid, &c.ln2c);
    run_attention(blk.cq, blk.ck, blk.cv, c.h2, memory, pk.dec_off, pk.dec_len, pk.enc_off,
                  pk.enc_len, false, c.cross_attn);
    c.x_mid2 = c.x_mid + nn::linear_fwd(blk.co, c.cross_attn.concat);
    c.h3 = nn::layernorm_fwd(blk.ln3, c.x_mid2, &c.ln3c);
    c.ff_pre = nn::linear_fwd(blk.ff1, c.h3);
    c.ff_act = nn::gelu_fwd(c.ff_pre);
    y = c.x_mid2 + nn::linear_fwd(blk.ff2, c.ff_act);
  }
  LayerNormCache decFinalC;
  const Mat dec_out = nn::layernorm_fwd(P.dec_ln_final, y, &decFinalC);
  const Mat dec_pre_final = std::move(y);
  const Mat logits = nn::linear_fwd(P.lm_head, dec_out);

  // Token-level cross entropy.
  InversionModel::BatchResult result;
  result.tokens = long(pk.dec_total);
  Mat dlogits;
  if (G) dlogits.resize(logits.rows(), logits.cols());
  for (Eigen::Index r = 0; r < logits.rows(); ++r) {
    const Eigen::RowVectorXd lsm = nn::log_softmax_row(logits.row(r));
    const int tgt = dec_targets[size_t(r)];
    result.loss_sum -= lsm(tgt);
    Eigen::Index argmax;
    lsm.maxCoeff(&argmax);
    if (int(argmax) == tgt) ++result.correct;
    if (G) {
      dlogits.row(r) = lsm.array().exp().matrix();
      dlogits(r, tgt) -= 1.0;
    }
  }
  if (!G) return result;

  // -------- backward --------
  const double scale = 1.0 / double(pk.dec_total);
  dlogits *= scale;

  Mat d_dec_out = nn::linear_bwd(P.lm_head, dec_out, dlogits, G->lm_head);
  Mat dy = nn::layernorm_bwd(P.dec_ln_final, decFinalC, d_dec_out, G->dec_ln_final);
  Mat dmemory = Mat::Zero(pk.enc_total, d_enc);
  (void)dec_pre_final;

  for (int L = cfg.dec_layers - 1; L >= 0; --L) {
    auto& c = decC[size_t(L)];
    const auto& blk = P.dec[size_t(L)];
    auto& g = G->dec[size_t(L)];
    // ffn
    const Mat d_ff_act = nn::linear_bwd(blk.ff2, c.ff_act, dy, g.ff2);
    const Mat d_ff_pre = nn::gelu_bwd(c.ff_pre, d_ff_act);
    const Mat d_h3 = nn::linear_bwd(blk.ff1, c.h3, d_ff_pre, g.ff1);
    Mat dx_mid2 = dy + nn::layernorm_bwd(blk.ln3, c.ln3c, d_h3, g.ln3);
    // cross attention
    const Mat d_concat_c = nn::linear_bwd(blk.co, c.cross_attn.concat, dx_mid2, g.co);
    Mat d_h2 = Mat::Zero(pk.dec_total, d_enc);
    attention_backward(blk.cq, blk.ck, blk.cv, c.h2, memory, pk.dec_off, pk.dec_len, pk.enc_off,
                       pk.enc_len, false, c.cross_attn, d_concat_c, g.cq, g.ck, g.cv, d_h2,
                       dmemory);
    Mat dx_mid = dx_mid2 + nn::layernorm_bwd(blk.ln2, c.ln2c, d_h2, g.ln2);
    // self attention
    const Mat d_concat_s = nn::linear_bwd(blk.so, c.self_attn.concat, dx_mid, g.so);
    Mat d_h1 = Mat::Zero(pk.dec_total, d_enc);
    attention_backward(blk.sq, blk.sk, blk.sv, c.h1, c.h1, pk.dec_off, pk.dec_len, pk.dec_off,
                       pk.dec_len, true, c.self_attn, d_concat_s, g.sq, g.sk, g.sv, d_h1, d_h1);
    dy = dx_mid + nn::layernorm_bwd(blk.ln1, c.ln1c, d_h1, g.ln1);
  }

  // decoder input grads -> embeddings
  for (Eigen::Index r = 0; r < pk.dec_total; ++r) {
    G->tok_emb.row(dec_in_ids[size_t(r)]) += dy.row(r);
  }
  for (int b = 0; b < B; ++b) {
    G->pos_dec.topRows(pk.dec_len[size_t(b)]) +=
        dy.middleRows(pk.dec_off[size_t(b)], pk.dec_len[size_t(b)]);
  }

  // encoder backward
  Mat dx = nn::layernorm_bwd(P.enc_ln_final, encFinalC, dmemory, G->enc_ln_final);
  (void)enc_pre_final;
  for (int L = cfg.enc_layers - 1; L >= 0; --L) {
    auto& c = encC[size_t(L)];
    const auto& blk = P.enc[size_t(L)];
    auto& g = G->enc[size_t(L)];
    const Mat d_ff_act = nn::linear_bwd(blk.ff2, c.ff_act, dx, g.ff2);
    const Mat d_ff_pre = nn::gelu_bwd(c.ff_pre, d_ff_act);
    const Mat d_h2 = nn::linear_bwd(blk.ff1, c.h2, d_ff_pre, g.ff1);
    Mat dx_mid = dx + nn::layernorm_bwd(blk.ln2, c.ln2c, d_h2, g.ln2);
    const Mat d_concat = nn::linear_bwd(blk.o, c.attn.concat, dx_mid, g.o);
    Mat d_h1 = Mat::Zero(pk.enc_total, d_enc);
    attention_backward(blk.q, blk.k, blk.v, c.h1, c.h1, pk.enc_off, pk.enc_len, pk.enc_off,
                       pk.enc_len, false, c.attn, d_concat, g.q, g.k, g.v, d_h1, d_h1);
    dx = dx_mid + nn::layernorm_bwd(blk.ln1, c.ln1c, d_h1, g.ln1);
  }

  // encoder input grads -> projection heads, token and position embeddings
  Mat dZt = Mat::Zero(B, Eigen::Index(s) * d_enc);
  Mat dZh = Mat::Zero(B, Eigen::Index(s) * d_enc);
  Mat dZd = Mat::Zero(B, Eigen::Index(s) * d_enc);
  for (int b = 0; b < B; ++b) {
    const auto& ex = batch[size_t(b)];
    const Eigen::Index off = pk.enc_off[size_t(b)];
    for (int i = 0; i < s; ++i) {
      dZt.row(b).segment(Eigen::Index(i) * d_enc, d_enc) = dx.row(off + i);
      if (fb[size_t(b)]) {
        dZh.row(b).segment(Eigen::Index(i) * d_enc, d_enc) = dx.row(off + s + i);
        dZd.row(b).segment(Eigen::Index(i) * d_enc, d_enc) = dx.row(off + 2 * s + i);
      }
    }
    for (size_t j = 0; j < ex.hyp_ids.size(); ++j) {
      G->tok_emb.row(ex.hyp_ids[j]) += dx.row(off + 3 * s + Eigen::Index(j));
    }
    G->pos_enc.topRows(pk.enc_len[size_t(b)]) += dx.middleRows(off, pk.enc_len[size_t(b)]);
  }
  head_backward(P.head_target, ct, dZt, G->head_target);
  head_backward(P.head_hyp, ch, dZh, G->head_hyp);
  head_backward(P.head_diff, cd, dZd, G->head_diff);

  return result;
}

}  // namespace

InversionModel::BatchResult InversionModel::forward_backward(
    std::span<const ConditionedExample> batch, ModelParams& grads) const {
  return run_batch(cfg_, params_, batch, &grads);
}

InversionModel::BatchResult InversionModel::forward_only(
    std::span<const ConditionedExample> batch) const {
  return run_batch(cfg_, params_, batch, nullptr);
}

// ---------------------------------------------------------------------------
// Inference
// ---------------------------------------------------------------------------

Mat InversionModel::encode(const Vec& e, const std::optional<Vec>& e_hyp,
                           std::span<const int> hyp_ids) const {
  if (int(hyp_ids.size()) > cfg_.max_tokens) {
    throw ContractError("encode: hypothesis exceeds max_tokens");
  }
  Mat x = assemble_corrector_input(params_, cfg_, e, e_hyp, hyp_ids);
  x += params_.pos_enc.topRows(x.rows());
  const int heads = cfg_.heads;
  const int dh = cfg_.d_enc / heads;
  for (const auto& blk : params_.enc) {
    const Mat h1 = nn::layernorm_fwd(blk.ln1, x, nullptr);
    const Mat q = nn::linear_fwd(blk.q, h1);
    const Mat k = nn::linear_fwd(blk.k, h1);
    const Mat v = nn::linear_fwd(blk.v, h1);
    Mat concat(x.rows(), cfg_.d_enc);
    for (int h = 0; h < heads; ++h) {
      MaskSpec mask{int(x.rows()), false};
      concat.middleCols(Eigen::Index(h) * dh, dh) =
          nn::attn_core_fwd(q.middleCols(Eigen::Index(h) * dh, dh),
                            k.middleCols(Eigen::Index(h) * dh, dh),
                            v.middleCols(Eigen::Index(h) * dh, dh), mask, nullptr);
    }
    x += nn::linear_fwd(blk.o, concat);
    const Mat h2 = nn::layernorm_fwd(blk.ln2, x, nullptr);
    x += nn::linear_fwd(blk.ff2, nn::gelu_fwd(nn::linear_fwd(blk.ff1, h2)));
  }
  return nn::layernorm_fwd(params_.enc_ln_final, x, nullptr);
}

namespace {

// Full re-forward of the decoder prefix; returns logits at the last position.
Eigen::RowVectorXd decoder_last_logits(const InverterConfig& cfg, const ModelParams& P,
                                       const Mat& memory, const std::vector<int>& prefix) {
  const int heads = cfg.heads;
  const int dh = cfg.d_enc / heads;
  const Eigen::Index len = Eigen::Index(prefix.size());
  Mat y(len, cfg.d_enc);
  for (Eigen::Index j = 0; j < len; ++j) {
    y.row(j) = P.tok_emb.row(prefix[size_t(j)]) + P.pos_dec.row(j);
  }
  for (const auto& blk : P.dec) {
    const Mat h1 = nn::layernorm_fwd(blk.ln1, y, nullptr);
    {
      const Mat q = nn::linear_fwd(blk.sq, h1);
      const Mat k = nn::linear_fwd(blk.sk, h1);
      const Mat v = nn::linear_fwd(blk.sv, h1);
      Mat concat(len, cfg.d_enc);
      for (int h = 0; h < heads; ++h) {
        MaskSpec mask{int(len), true};
        concat.middleCols(Eigen::Index(h) * dh, dh) =
            nn::attn_core_fwd(q.middleCols(Eigen::Index(h) * dh, dh),
                              k.middleCols(Eigen::Index(h) * dh, dh),
                              v.middleCols(Eigen::Index(h) * dh, dh), mask, nullptr);
      }
      y += nn::linear_fwd(blk.so, concat);
    }
    const Mat h2 = nn::layernorm_fwd(blk.ln2, y, nullptr);
    {
      const Mat q = nn::linear_fwd(blk.cq, h2);
      const Mat k = nn::linear_fwd(blk.ck, memory);
      const Mat v = nn::linear_fwd(blk.cv, memory);
      Mat concat(len, cfg.d_enc);
      for (int h = 0; h < heads; ++h) {
        MaskSpec mask{int(memory.rows()), false};
        concat.middleCols(Eigen::Index(h) * dh, dh) =
            nn::attn_core_fwd(q.middleCols(Eigen::Index(h) * dh, dh),
                              k.middleCols(Eigen::Index(h) * dh, dh),
                              v.middleCols(Eigen::Index(h) * dh, dh), mask, nullptr);
      }
      y += nn::linear_fwd(blk.co, concat);
    }
    const Mat h3 = nn::layernorm_fwd(blk.ln3, y, nullptr);
    y += nn::linear_fwd(blk.ff2, nn::gelu_fwd(nn::linear_fwd(blk.ff1, h3)));
  }
  const Mat out = nn::layernorm_fwd(P.dec_ln_final, y, nullptr);
  return out.row(len - 1) * P.lm_head.w + P.lm_head.b.row(0);
}

struct BeamItem {
  std::vector<int> ids;  // emitted tokens, no specials
  double logprob = 0.0;
};

}  // namespace

std::vector<ScoredTokens> InversionModel::decode_beam(const Mat& memory, int width,
                                                      int num_return) const {
  if (width < 1) throw ConfigError("decode_beam: width must be >= 1");
  if (num_return < 1) throw ConfigError("decode_beam: num_return must be >= 1");
  const int bos = cfg_.vocab - 2;
  const int eos = cfg_.vocab - 1;
  const int pad = cfg_.vocab - 3;

  std::vector<BeamItem> live{BeamItem{}};
  std::vector<BeamItem> finished;

  for (int step = 0; step < cfg_.max_tokens + 1 && !live.empty(); ++step) {
    struct Cand {
      BeamItem item;
      int token;
    };
    std::vector<Cand> cands;
    cands.reserve(live.size() * size_t(width));
    for (const auto& beam : live) {
      std::vector<int> prefix;
      prefix.reserve(beam.ids.size() + 1);
      prefix.push_back(bos);
      prefix.insert(prefix.end(), beam.ids.begin(), beam.ids.end());
      const Eigen::RowVectorXd logits = decoder_last_logits(cfg_, params_, memory, prefix);
      const Eigen::RowVectorXd lsm = nn::log_softmax_row(logits);
      // rank tokens by (-logprob, token id); specials other than EOS excluded
      std::vector<int> order;
      order.reserve(size_t(cfg_.vocab));
      for (int t = 0; t < cfg_.vocab; ++t) {
        if (t == pad || t == bos) continue;
        order.push_back(t);
      }
      std::stable_sort(order.begin(), order.end(),
                       [&](int a, int b) { return lsm(a) > lsm(b); });
      const int take = std::min<int>(width, int(order.size()));
      for (int r = 0; r < take; ++r) {
        Cand c;
        c.item.ids = beam.ids;
        c.item.logprob = beam.logprob + lsm(order[size_t(r)]);
        c.token = order[size_t(r)];
        cands.push_back(std::move(c));
      }
    }
    std::stable_sort(cands.begin(), cands.end(),
                     [](const Cand& a, const Cand& b) { return a.item.logprob > b.item.logprob; });
    if (int(cands.size()) > width) cands.resize(size_t(width));

    live.clear();
    for (auto& c : cands) {
      if (c.token == eos) {
        finished.push_back(std::move(c.item));
      } else {
        c.item.ids.push_back(c.token);
        if (int(c.item.ids.size()) >= cfg_.max_tokens) {
          finished.push_back(std::move(c.item));
        } else {
          live.push_back(std::move(c.item));
        }
      }
    }
  }
  for (auto& beam : live) finished.push_back(std::move(beam));
  std::stable_sort(finished.begin(), finished.end(),
                   [](const BeamItem& a, const BeamItem& b) { return a.logprob > b.logprob; });

  std::vector<ScoredTokens> out;
  const int take = std::min<int>(num_return, int(finished.size()));
  out.reserve(size_t(take));
  for (int i = 0; i < take; ++i) {
    out.push_back(ScoredTokens{std::move(finished[size_t(i)].ids), finished[size_t(i)].logprob});
  }
  return out;
}

std::vector<ScoredTokens> InversionModel::decode_nucleus(const Mat& memory, double top_p,
                                                         int num_return, Rng& rng) const {
  if (!(top_p > 0.0 && top_p <= 1.0)) throw ConfigError("decode_nucleus: p must be in (0, 1]");
  if (num_return < 1) throw ConfigError("decode_nucleus: num_return must be >= 1");
  const int bos = cfg_.vocab - 2;
  const int eos = cfg_.vocab - 1;
  const int pad = cfg_.vocab - 3;

  std::vector<ScoredTokens> out;
  out.reserve(size_t(num_return));
  for (int r = 0; r < num_return; ++r) {
    ScoredTokens sample;
    std::vector<int> prefix{bos};
    for (int step = 0; step < cfg_.max_tokens; ++step) {
      const Eigen::RowVectorXd logits = decoder_last_logits(cfg_, params_, memory, prefix);
      const Eigen::RowVectorXd lsm = nn::log_softmax_row(logits);
      std::vector<std::pair<double, int>> probs;
      probs.reserve(size_t(cfg_.vocab));
      for (int t = 0; t < cfg_.vocab; ++t) {
        if (t == pad || t == bos) continue;
        probs.emplace_back(std::exp(lsm(t)), t);
      }
      std::stable_sort(probs.begin(), probs.end(), [](const auto& a, const auto& b) {
        if (a.first != b.first) return a.first > b.first;
        return a.second < b.second;
      });
      // smallest prefix with cumulative mass >= p, always at least one token
      double cum = 0.0;
      size_t nucleus = 0;
      while (nucleus < probs.size()) {
        cum += probs[nucleus].first;
        ++nucleus;
        if (cum >= top_p) break;
      }
      const double u = rng.next_double() * cum;
      double acc = 0.0;
      int chosen = probs[nucleus - 1].second;
      for (size_t i = 0; i < nucleus; ++i) {
        acc += probs[i].first;
        if (u <= acc) {
          chosen = probs[i].second;
          break;
        }
      }
      sample.logprob += lsm(chosen);
      if (chosen == eos) break;
      sample.ids.push_back(chosen);
      prefix.push_back(chosen);
    }
    out.push_back(std::move(sample));
  }
  return out;
}

}  // namespace embed2text
