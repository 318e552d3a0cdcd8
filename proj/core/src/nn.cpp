#include "embed2text/nn.hpp"

#include <cmath>

#include "embed2text/common.hpp"

namespace embed2text::nn {

namespace {
constexpr double kLnEps = 1e-5;
constexpr double kMaskValue = -1e30;
}  // namespace

Mat linear_fwd(const Linear& p, const Mat& x) {
  return (x * p.w).rowwise() + p.b.row(0);
}

Mat linear_bwd(const Linear& p, const Mat& x, const Mat& dy, Linear& g) {
  g.w.noalias() += x.transpose() * dy;
  g.b.row(0) += dy.colwise().sum();
  return dy * p.w.transpose();
}

Mat layernorm_fwd(const LayerNormParams& p, const Mat& x, LayerNormCache* cache) {
  const Eigen::Index n = x.rows();
  const Eigen::Index d = x.cols();
  Mat xhat(n, d);
  Vec inv_std(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    const double mean = x.row(i).mean();
    const double var = (x.row(i).array() - mean).square().mean();
    const double is = 1.0 / std::sqrt(var + kLnEps);
    xhat.row(i) = (x.row(i).array() - mean) * is;
    inv_std(i) = is;
  }
  Mat y = (xhat.array().rowwise() * p.gamma.row(0).array()).rowwise() + p.beta.row(0).array();
  if (cache) {
    cache->xhat = std::move(xhat);
    cache->inv_std = std::move(inv_std);
  }
  return y;
}

Mat layernorm_bwd(const LayerNormParams& p, const LayerNormCache& c, const Mat& dy,
                  LayerNormParams& g) {
  const Eigen::Index n = dy.rows();
  const Eigen::Index d = dy.cols();
  g.gamma.row(0) += (dy.array() * c.xhat.array()).colwise().sum().matrix();
  g.beta.row(0) += dy.colwise().sum();

  Mat dx(n, d);
  using RowArray = Eigen::Array<double, 1, Eigen::Dynamic>;
  for (Eigen::Index i = 0; i < n; ++i) {
    const RowArray dxhat = dy.row(i).array() * p.gamma.row(0).array();
    const RowArray xh = c.xhat.row(i).array();
    const double m1 = dxhat.mean();
    const double m2 = (dxhat * xh).mean();
    dx.row(i) = (c.inv_std(i) * (dxhat - m1 - xh * m2)).matrix();
  }
  return dx;
}

Mat gelu_fwd(const Mat& x) {
  return x.unaryExpr([](double v) { return 0.5 * v * (1.0 + std::erf(v * M_SQRT1_2)); });
}

Mat gelu_bwd(const Mat& x, const Mat& dy) {
  Mat dgelu = x.unaryExpr([](double v) {
    const double cdf = 0.5 * (1.0 + std::erf(v * M_SQRT1_2));
    const double pdf = std::exp(-0.5 * v * v) / std::sqrt(2.0 * M_PI);
    return cdf + v * pdf;
  });
  return dgelu.cwiseProduct(dy);
}

Mat attn_core_fwd(const Mat& q, const Mat& k, const Mat& v, const MaskSpec& mask,
                  AttnCoreCache* cache) {
  const double scale = 1.0 / std::sqrt(double(q.cols()));
  Mat scores = q * k.transpose() * scale;
  const Eigen::Index qn = scores.rows();
  const Eigen::Index kn = scores.cols();
  for (Eigen::Index i = 0; i < qn; ++i) {
    for (Eigen::Index j = 0; j < kn; ++j) {
      if (j >= mask.kv_valid || (mask.causal && j > i)) scores(i, j) = kMaskValue;
    }
  }
  // row softmax
  Mat attn(qn, kn);
  for (Eigen::Index i = 0; i < qn; ++i) {
    const double m = scores.row(i).maxCoeff();
    Eigen::ArrayXd ex = (scores.row(i).array() - m).exp();
    attn.row(i) = (ex / ex.sum()).matrix();
  }
  Mat out = attn * v;
  if (cache) cache->attn = std::move(attn);
  return out;
}

void attn_core_bwd(const Mat& q, const Mat& k, const Mat& v, const AttnCoreCache& cache,
                   const Mat& dout, const MaskSpec& mask, Mat& dq, Mat& dk, Mat& dv) {
  const double scale = 1.0 / std::sqrt(double(q.cols()));
  const Mat& attn = cache.attn;
  dv.noalias() += attn.transpose() * dout;
  Mat dattn = dout * v.transpose();
  // softmax backward per row: ds = a * (da - sum(a*da))
  Mat dscores(attn.rows(), attn.cols());
  for (Eigen::Index i = 0; i < attn.rows(); ++i) {
    const double dot = attn.row(i).dot(dattn.row(i));
    dscores.row(i) = (attn.row(i).array() * (dattn.row(i).array() - dot)).matrix();
  }
  // masked positions have attn == 0 there, so dscores is already zero for them
  (void)mask;
  dq.noalias() = dscores * k * scale;
  dk.noalias() += dscores.transpose() * q * scale;
}

Eigen::RowVectorXd log_softmax_row(const Eigen::RowVectorXd& logits) {
  const double m = logits.maxCoeff();
  const Eigen::ArrayXd shifted = (logits.array() - m).transpose();
  const double lse = std::log(shifted.exp().sum());
  return (shifted - lse).transpose().matrix();
}

double lr_schedule(long step, long total_steps, long warmup_steps, double peak_lr) {
  if (total_steps <= 0) throw ContractError("lr_schedule: total_steps must be > 0");
  if (warmup_steps < 0) warmup_steps = 0;
  if (step < 0) step = 0;
  if (warmup_steps > 0 && step < warmup_steps) {
    return peak_lr * double(step) / double(warmup_steps);
  }
  if (step >= total_steps) return 0.0;
  const double denom = double(total_steps - warmup_steps);
  if (denom <= 0) return peak_lr;
  return peak_lr * double(total_steps - step) / denom;
}

}  // namespace embed2text::nn
