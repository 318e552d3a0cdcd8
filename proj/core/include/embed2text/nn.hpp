#pragma once

#include <Eigen/Dense>
#include <vector>

namespace embed2text::nn {

using Mat = Eigen::MatrixXd;
using Vec = Eigen::VectorXd;

// Rows are positions, columns are features throughout.

struct Linear {
  Mat w;  // in x out
  Mat b;  // 1 x out
};

struct LayerNormParams {
  Mat gamma;  // 1 x dim
  Mat beta;   // 1 x dim
};

Mat linear_fwd(const Linear& p, const Mat& x);
// Returns dx; accumulates parameter gradients into g.
Mat linear_bwd(const Linear& p, const Mat& x, const Mat& dy, Linear& g);

struct LayerNormCache {
  Mat xhat;
  Vec inv_std;
};
Mat layernorm_fwd(const LayerNormParams& p, const Mat& x, LayerNormCache* cache);
Mat layernorm_bwd(const LayerNormParams& p, const LayerNormCache& c, const Mat& dy,
                  LayerNormParams& g);

// Exact GELU (erf form).
Mat gelu_fwd(const Mat& x);
Mat gelu_bwd(const Mat& x, const Mat& dy);

// Masking spec for one attention call: kv positions >= kv_valid are hidden;
// causal additionally hides kv j > query i.
struct MaskSpec {
  int kv_valid = 0;
  bool causal = false;
};

struct AttnCoreCache {
  Mat attn;  // q_len x kv_len softmax weights
};

// Scaled dot-product core for one (sequence, head): out = softmax(q k^T / sqrt(dh)) v.
Mat attn_core_fwd(const Mat& q, const Mat& k, const Mat& v, const MaskSpec& mask,
                  AttnCoreCache* cache);
// Fills dq and accumulates into dk, dv.
void attn_core_bwd(const Mat& q, const Mat& k, const Mat& v, const AttnCoreCache& cache,
                   const Mat& dout, const MaskSpec& mask, Mat& dq, Mat& dk, Mat& dv);

// log-softmax over one row vector.
Eigen::RowVectorXd log_softmax_row(const Eigen::RowVectorXd& logits);

// Learning-rate schedule: linear warmup from zero followed by linear decay to
// zero at total_steps. lr(0) = 0.
double lr_schedule(long step, long total_steps, long warmup_steps, double peak_lr);

}  // namespace embed2text::nn
