#include <algorithm>
#include <cmath>
#include <random>
#include <string>

#include <Eigen/Core>
#if defined(__GLIBC__)
#include <malloc.h>
#endif

#include "workload_impl.hpp"

namespace mw {

namespace {

constexpr std::uint64_t kTableStream = 11;
constexpr std::uint64_t kBatchStream = 12;
constexpr std::uint64_t kInitStream = 13;
constexpr double kInitStd = 0.02;
constexpr double kLayerNormEps = 1e-5;
constexpr double kFirstOrderWeight = 2.5;
constexpr double kSecondOrderWeight = 1.5;

// Parameter slots. Each block holds 8 tensors.
constexpr std::size_t kTok = 0;
constexpr std::size_t kPos = 1;
constexpr std::size_t kBlockBase = 2;
constexpr std::size_t kPerBlock = 8;
enum BlockSlot : std::size_t { Ln1Gain, Ln1Bias, Qkv, AttnOut, Ln2Gain, Ln2Bias, MlpIn, MlpOut };

struct LayerNormCache {
  Mat xhat;
  std::vector<double> rstd;
};

Mat layernorm_forward(const Mat& x, const Mat& gain, const Mat& bias, LayerNormCache& cache) {
  const std::size_t n = x.rows();
  const std::size_t d = x.cols();
  cache.xhat = Mat(n, d);
  cache.rstd.assign(n, 0.0);
  Mat y(n, d);
  for (std::size_t i = 0; i < n; ++i) {
    auto row = x.row(i);
    double mean = 0.0;
    for (double v : row) mean += v;
    mean /= static_cast<double>(d);
    double var = 0.0;
    for (double v : row) var += (v - mean) * (v - mean);
    var /= static_cast<double>(d);
    const double rstd = 1.0 / std::sqrt(var + kLayerNormEps);
    cache.rstd[i] = rstd;
    for (std::size_t j = 0; j < d; ++j) {
      const double xh = (row[j] - mean) * rstd;
      cache.xhat(i, j) = xh;
      y(i, j) = xh * gain(0, j) + bias(0, j);
    }
  }
  return y;
}

Mat layernorm_backward(const Mat& dy, const Mat& gain, const LayerNormCache& cache, Mat& dgain,
                       Mat& dbias) {
  const std::size_t n = dy.rows();
  const std::size_t d = dy.cols();
  Mat dx(n, d);
  std::vector<double> dxhat(d);
  for (std::size_t i = 0; i < n; ++i) {
    double mean_dxhat = 0.0;
    double mean_dxhat_xhat = 0.0;
    for (std::size_t j = 0; j < d; ++j) {
      const double g = dy(i, j);
      dgain(0, j) += g * cache.xhat(i, j);
      dbias(0, j) += g;
      dxhat[j] = g * gain(0, j);
      mean_dxhat += dxhat[j];
      mean_dxhat_xhat += dxhat[j] * cache.xhat(i, j);
    }
    mean_dxhat /= static_cast<double>(d);
    mean_dxhat_xhat /= static_cast<double>(d);
    for (std::size_t j = 0; j < d; ++j) {
      dx(i, j) = cache.rstd[i] * (dxhat[j] - mean_dxhat - cache.xhat(i, j) * mean_dxhat_xhat);
    }
  }
  return dx;
}

constexpr double kGeluC = 0.7978845608028654;  // √(2/π)
constexpr double kGeluA = 0.044715;

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using Strided = Eigen::Map<const RowMat, 0, Eigen::OuterStride<>>;
using StridedMut = Eigen::Map<RowMat, 0, Eigen::OuterStride<>>;
using Vec = Eigen::Map<Eigen::ArrayXd>;

Eigen::Map<RowMat> view(Mat& m) { return {m.data(), static_cast<Eigen::Index>(m.rows()),
                                          static_cast<Eigen::Index>(m.cols())}; }
Eigen::Map<const RowMat> view(const Mat& m) {
  return {m.data(), static_cast<Eigen::Index>(m.rows()), static_cast<Eigen::Index>(m.cols())};
}

// tanh(u) = 1 − 2 / (exp(2u) + 1), evaluated with the vectorized exp. Writes
// tanh of the GELU argument into `t` and GELU(pre) into `act`.
void gelu_forward(const Mat& pre, Mat& t, Mat& act) {
  t = Mat(pre.rows(), pre.cols());
  act = Mat(pre.rows(), pre.cols());
  const auto n = static_cast<Eigen::Index>(pre.size());
  Eigen::Map<const Eigen::ArrayXd> x(pre.data(), n);
  Vec tv(t.data(), n);
  tv = (2.0 * kGeluC * (x + kGeluA * x.cube())).exp();
  tv = 1.0 - 2.0 / (tv + 1.0);
  Vec(act.data(), n) = 0.5 * x * (1.0 + tv);
}

void gelu_backward(Mat& d, const Mat& pre, const Mat& t) {
  const auto n = static_cast<Eigen::Index>(pre.size());
  Eigen::Map<const Eigen::ArrayXd> x(pre.data(), n), tv(t.data(), n);
  Vec dv(d.data(), n);
  dv *= 0.5 * (1.0 + tv) + 0.5 * x * (1.0 - tv.square()) * kGeluC * (1.0 + 3.0 * kGeluA * x.square());
}

// In-place softmax over the first `len` entries of a row.
void softmax_prefix(double* row, std::size_t len, double scale) {
  Vec r(row, static_cast<Eigen::Index>(len));
  r = (r * scale - r.maxCoeff() * scale).exp();
  r /= r.sum();
}

struct BlockCache {
  LayerNormCache ln1, ln2;
  Mat h1, qkv, attn, h2, pre, tanh, act;
  std::vector<Mat> probs;  // one T×T matrix per (sequence, head)
};

struct Forward {
  std::vector<BlockCache> blocks;
  LayerNormCache lnf;
  Mat hf;
  Mat probs;  // softmax over the vocabulary, N×V
  double loss = 0.0;
};

// Activations are several MB each and reallocated every step. Keeping freed
// blocks in the heap avoids an mmap/munmap and fresh page faults per tensor.
void keep_freed_memory() {
#if defined(__GLIBC__)
  static const bool once = [] {
    mallopt(M_MMAP_THRESHOLD, 256 << 20);
    mallopt(M_TRIM_THRESHOLD, 512 << 20);
    return true;
  }();
  (void)once;
#endif
}

class TinyLM final : public Workload {
 public:
  explicit TinyLM(const WorkloadSpec& spec)
      : Workload(spec),
        layers_(static_cast<std::size_t>(spec.lm.layers)),
        d_(static_cast<std::size_t>(spec.lm.d_model)),
        heads_(static_cast<std::size_t>(spec.lm.heads)),
        vocab_(static_cast<std::size_t>(spec.lm.vocab)),
        seq_(static_cast<std::size_t>(spec.lm.seq_len)) {
    build_layout();
    build_table();
    keep_freed_memory();
  }

  const std::vector<ParamInfo>& layout() const override { return layout_; }

  std::vector<Mat> init_params(std::uint64_t seed) const override {
    auto rng = stream_rng(seed, kInitStream, 0);
    std::normal_distribution<double> normal(0.0, kInitStd);
    std::vector<Mat> params;
    for (const ParamInfo& p : layout_) {
      Mat m(p.rows, p.cols);
      if (p.cls == ParamClass::LayerNorm) {
        if (p.name.ends_with("gain")) m = Mat(p.rows, p.cols, 1.0);
      } else {
        for (double& x : m.values()) x = normal(rng);
      }
      params.push_back(std::move(m));
    }
    return params;
  }

  Batch next_batch(long step) const override {
    return sample_batch(spec().data_seed, static_cast<std::uint64_t>(step), step);
  }

  std::vector<Batch> validation_batches() const override {
    std::vector<Batch> out;
    for (int k = 0; k < kValidationBatches; ++k)
      out.push_back(sample_batch(spec().data_seed + 1, static_cast<std::uint64_t>(k), k));
    return out;
  }

  LossAndGrads loss_and_grads(const std::vector<Mat>& params, const Batch& batch) const override {
    check_params(params);
    const std::size_t seqs = sequences_in(batch);
    Forward f = forward(params, batch, seqs);
    return {f.loss, backward(params, batch, seqs, f)};
  }

  double loss(const std::vector<Mat>& params, const Batch& batch) const override {
    check_params(params);
    return forward(params, batch, sequences_in(batch)).loss;
  }

 private:
  std::size_t layers_, d_, heads_, vocab_, seq_;
  std::vector<ParamInfo> layout_;
  std::vector<double> cdf_;  // (a, b) -> cumulative distribution over the next token

  static std::size_t block(std::size_t l, BlockSlot s) { return kBlockBase + kPerBlock * l + s; }
  [[nodiscard]] std::size_t lnf_gain() const { return kBlockBase + kPerBlock * layers_; }
  [[nodiscard]] std::size_t lnf_bias() const { return lnf_gain() + 1; }
  [[nodiscard]] std::size_t head() const { return lnf_gain() + 2; }

  void build_layout() {
    layout_.push_back({"tok_embed", ParamClass::Embed, vocab_, d_});
    layout_.push_back({"pos_embed", ParamClass::Embed, seq_, d_});
    for (std::size_t l = 0; l < layers_; ++l) {
      const std::string p = "blocks." + std::to_string(l) + ".";
      layout_.push_back({p + "ln1.gain", ParamClass::LayerNorm, 1, d_});
      layout_.push_back({p + "ln1.bias", ParamClass::LayerNorm, 1, d_});
      layout_.push_back({p + "attn.qkv", ParamClass::AttentionQkv, d_, 3 * d_});
      layout_.push_back({p + "attn.out", ParamClass::AttentionOut, d_, d_});
      layout_.push_back({p + "ln2.gain", ParamClass::LayerNorm, 1, d_});
      layout_.push_back({p + "ln2.bias", ParamClass::LayerNorm, 1, d_});
      layout_.push_back({p + "mlp.in", ParamClass::MlpIn, d_, 4 * d_});
      layout_.push_back({p + "mlp.out", ParamClass::MlpOut, 4 * d_, d_});
    }
    layout_.push_back({"ln_f.gain", ParamClass::LayerNorm, 1, d_});
    layout_.push_back({"ln_f.bias", ParamClass::LayerNorm, 1, d_});
    layout_.push_back({"head", ParamClass::OutputHead, d_, vocab_});
  }

  // Order-2 Markov chain: logits(a, b -> c) = 2.5·z1[b][c] + 1.5·z2[a][c].
  void build_table() {
    auto rng = stream_rng(spec().data_seed, kTableStream, 0);
    std::normal_distribution<double> normal(0.0, 1.0);
    std::vector<double> z1(vocab_ * vocab_), z2(vocab_ * vocab_);
    for (double& x : z1) x = normal(rng);
    for (double& x : z2) x = normal(rng);
    cdf_.assign(vocab_ * vocab_ * vocab_, 0.0);
    std::vector<double> logits(vocab_);
    for (std::size_t a = 0; a < vocab_; ++a)
      for (std::size_t b = 0; b < vocab_; ++b) {
        double mx = -1e300;
        for (std::size_t c = 0; c < vocab_; ++c) {
          logits[c] = kFirstOrderWeight * z1[b * vocab_ + c] + kSecondOrderWeight * z2[a * vocab_ + c];
          mx = std::max(mx, logits[c]);
        }
        double total = 0.0;
        for (std::size_t c = 0; c < vocab_; ++c) total += std::exp(logits[c] - mx);
        double acc = 0.0;
        double* row = &cdf_[(a * vocab_ + b) * vocab_];
        for (std::size_t c = 0; c < vocab_; ++c) {
          acc += std::exp(logits[c] - mx) / total;
          row[c] = acc;
        }
        row[vocab_ - 1] = 1.0;
      }
  }

  Batch sample_batch(std::uint64_t seed, std::uint64_t index, long label) const {
    auto rng = stream_rng(seed, kBatchStream, index);
    std::uniform_real_distribution<double> uniform(0.0, 1.0);
    std::uniform_int_distribution<int> first(0, static_cast<int>(vocab_) - 1);
    const std::size_t width = seq_ + 1;
    Batch b;
    b.index = label;
    b.tokens.resize(static_cast<std::size_t>(spec().batch_size) * width);
    for (std::size_t s = 0; s < static_cast<std::size_t>(spec().batch_size); ++s) {
      int* seq = &b.tokens[s * width];
      seq[0] = first(rng);
      if (width > 1) seq[1] = first(rng);
      for (std::size_t t = 2; t < width; ++t) {
        const double* row = &cdf_[(static_cast<std::size_t>(seq[t - 2]) * vocab_ +
                                   static_cast<std::size_t>(seq[t - 1])) * vocab_];
        const double u = uniform(rng);
        seq[t] = static_cast<int>(std::upper_bound(row, row + vocab_ - 1, u) - row);
      }
    }
    return b;
  }

  std::size_t sequences_in(const Batch& batch) const {
    const std::size_t width = seq_ + 1;
    if (batch.tokens.empty() || batch.tokens.size() % width != 0) {
      throw DimensionError("tinylm: batch is not a whole number of sequences");
    }
    for (int tok : batch.tokens)
      if (tok < 0 || static_cast<std::size_t>(tok) >= vocab_) {
        throw DimensionError("tinylm: token out of range");
      }
    return batch.tokens.size() / width;
  }

  int input_token(const Batch& b, std::size_t s, std::size_t t) const {
    return b.tokens[s * (seq_ + 1) + t];
  }
  int target_token(const Batch& b, std::size_t s, std::size_t t) const {
    return b.tokens[s * (seq_ + 1) + t + 1];
  }

  // Rows [r0, r0 + seq) and columns [c0, c0 + w) of m, without copying.
  Strided block_of(const Mat& m, std::size_t r0, std::size_t c0, std::size_t w) const {
    return {m.data() + r0 * m.cols() + c0, static_cast<Eigen::Index>(seq_),
            static_cast<Eigen::Index>(w), Eigen::OuterStride<>(static_cast<Eigen::Index>(m.cols()))};
  }
  StridedMut block_of(Mat& m, std::size_t r0, std::size_t c0, std::size_t w) const {
    return {m.data() + r0 * m.cols() + c0, static_cast<Eigen::Index>(seq_),
            static_cast<Eigen::Index>(w), Eigen::OuterStride<>(static_cast<Eigen::Index>(m.cols()))};
  }

  Mat attention_forward(const Mat& qkv, std::size_t seqs, std::vector<Mat>& probs) const {
    const std::size_t dh = d_ / heads_;
    const double scale = 1.0 / std::sqrt(static_cast<double>(dh));
    Mat out(seqs * seq_, d_);
    probs.assign(seqs * heads_, Mat());
    for (std::size_t s = 0; s < seqs; ++s)
      for (std::size_t h = 0; h < heads_; ++h) {
        const std::size_t r0 = s * seq_;
        Mat& p = probs[s * heads_ + h];
        p = Mat(seq_, seq_);
        auto pv = view(p);
        pv.noalias() = block_of(qkv, r0, h * dh, dh) * block_of(qkv, r0, d_ + h * dh, dh).transpose();
        for (std::size_t i = 0; i < seq_; ++i) {
          double* row = p.row(i).data();
          softmax_prefix(row, i + 1, scale);
          std::fill(row + i + 1, row + seq_, 0.0);
        }
        block_of(out, r0, h * dh, dh).noalias() = pv * block_of(qkv, r0, 2 * d_ + h * dh, dh);
      }
    return out;
  }

  Mat attention_backward(const Mat& dout, const Mat& qkv, std::size_t seqs,
                         const std::vector<Mat>& probs) const {
    const std::size_t dh = d_ / heads_;
    const double scale = 1.0 / std::sqrt(static_cast<double>(dh));
    Mat dqkv(seqs * seq_, 3 * d_);
    Mat dp(seq_, seq_);
    auto dpv = view(dp);
    for (std::size_t s = 0; s < seqs; ++s)
      for (std::size_t h = 0; h < heads_; ++h) {
        const std::size_t r0 = s * seq_;
        const Mat& p = probs[s * heads_ + h];
        const auto dO = block_of(dout, r0, h * dh, dh);
        dpv.noalias() = dO * block_of(qkv, r0, 2 * d_ + h * dh, dh).transpose();
        // Softmax backward, then the 1/√dh scaling of the scores.
        for (std::size_t i = 0; i < seq_; ++i) {
          double* row = dp.row(i).data();
          const double* pr = p.row(i).data();
          double inner = 0.0;
          for (std::size_t j = 0; j <= i; ++j) inner += row[j] * pr[j];
          for (std::size_t j = 0; j <= i; ++j) row[j] = pr[j] * (row[j] - inner) * scale;
          for (std::size_t j = i + 1; j < seq_; ++j) row[j] = 0.0;
        }
        block_of(dqkv, r0, h * dh, dh).noalias() = dpv * block_of(qkv, r0, d_ + h * dh, dh);
        block_of(dqkv, r0, d_ + h * dh, dh).noalias() =
            dpv.transpose() * block_of(qkv, r0, h * dh, dh);
        block_of(dqkv, r0, 2 * d_ + h * dh, dh).noalias() = view(p).transpose() * dO;
      }
    return dqkv;
  }

  Forward forward(const std::vector<Mat>& params, const Batch& batch, std::size_t seqs) const {
    const std::size_t n = seqs * seq_;
    Forward f;
    Mat x(n, d_);
    for (std::size_t s = 0; s < seqs; ++s)
      for (std::size_t t = 0; t < seq_; ++t) {
        const auto tok = static_cast<std::size_t>(input_token(batch, s, t));
        double* dst = x.row(s * seq_ + t).data();
        for (std::size_t j = 0; j < d_; ++j) dst[j] = params[kTok](tok, j) + params[kPos](t, j);
      }
    f.blocks.resize(layers_);
    for (std::size_t l = 0; l < layers_; ++l) {
      BlockCache& c = f.blocks[l];
      c.h1 = layernorm_forward(x, params[block(l, Ln1Gain)], params[block(l, Ln1Bias)], c.ln1);
      c.qkv = matmul(c.h1, params[block(l, Qkv)]);
      c.attn = attention_forward(c.qkv, seqs, c.probs);
      gemm(1.0, c.attn, false, params[block(l, AttnOut)], false, 1.0, x);
      c.h2 = layernorm_forward(x, params[block(l, Ln2Gain)], params[block(l, Ln2Bias)], c.ln2);
      c.pre = matmul(c.h2, params[block(l, MlpIn)]);
      gelu_forward(c.pre, c.tanh, c.act);
      gemm(1.0, c.act, false, params[block(l, MlpOut)], false, 1.0, x);
    }
    f.hf = layernorm_forward(x, params[lnf_gain()], params[lnf_bias()], f.lnf);
    f.probs = matmul(f.hf, params[head()]);
    double loss = 0.0;
    for (std::size_t s = 0; s < seqs; ++s)
      for (std::size_t t = 0; t < seq_; ++t) {
        double* row = f.probs.row(s * seq_ + t).data();
        softmax_prefix(row, vocab_, 1.0);
        loss -= std::log(row[target_token(batch, s, t)]);
      }
    f.loss = loss / static_cast<double>(n);
    if (!std::isfinite(f.loss)) {
      throw NumericError("tinylm: non-finite loss on batch " + std::to_string(batch.index));
    }
    return f;
  }

  std::vector<Mat> backward(const std::vector<Mat>& params, const Batch& batch, std::size_t seqs,
                            const Forward& f) const {
    const std::size_t n = seqs * seq_;
    std::vector<Mat> grads;
    for (const ParamInfo& p : layout_) grads.emplace_back(p.rows, p.cols);

    Mat dlogits = f.probs;
    const double inv_n = 1.0 / static_cast<double>(n);
    for (std::size_t s = 0; s < seqs; ++s)
      for (std::size_t t = 0; t < seq_; ++t) {
        const std::size_t r = s * seq_ + t;
        dlogits(r, static_cast<std::size_t>(target_token(batch, s, t))) -= 1.0;
      }
    dlogits *= inv_n;

    gemm(1.0, f.hf, true, dlogits, false, 0.0, grads[head()]);
    const Mat dhf = matmul_nt(dlogits, params[head()]);
    Mat dx = layernorm_backward(dhf, params[lnf_gain()], f.lnf, grads[lnf_gain()], grads[lnf_bias()]);

    for (std::size_t l = layers_; l-- > 0;) {
      const BlockCache& c = f.blocks[l];
      // MLP branch.
      gemm(1.0, c.act, true, dx, false, 0.0, grads[block(l, MlpOut)]);
      Mat dpre = matmul_nt(dx, params[block(l, MlpOut)]);
      gelu_backward(dpre, c.pre, c.tanh);
      gemm(1.0, c.h2, true, dpre, false, 0.0, grads[block(l, MlpIn)]);
      const Mat dh2 = matmul_nt(dpre, params[block(l, MlpIn)]);
      dx += layernorm_backward(dh2, params[block(l, Ln2Gain)], c.ln2, grads[block(l, Ln2Gain)],
                               grads[block(l, Ln2Bias)]);
      // Attention branch.
      gemm(1.0, c.attn, true, dx, false, 0.0, grads[block(l, AttnOut)]);
      const Mat dattn = matmul_nt(dx, params[block(l, AttnOut)]);
      const Mat dqkv = attention_backward(dattn, c.qkv, seqs, c.probs);
      gemm(1.0, c.h1, true, dqkv, false, 0.0, grads[block(l, Qkv)]);
      const Mat dh1 = matmul_nt(dqkv, params[block(l, Qkv)]);
      dx += layernorm_backward(dh1, params[block(l, Ln1Gain)], c.ln1, grads[block(l, Ln1Gain)],
                               grads[block(l, Ln1Bias)]);
    }

    for (std::size_t s = 0; s < seqs; ++s)
      for (std::size_t t = 0; t < seq_; ++t) {
        const auto tok = static_cast<std::size_t>(input_token(batch, s, t));
        const double* src = dx.row(s * seq_ + t).data();
        for (std::size_t j = 0; j < d_; ++j) {
          grads[kTok](tok, j) += src[j];
          grads[kPos](t, j) += src[j];
        }
      }
    return grads;
  }
};

}  // namespace

std::unique_ptr<Workload> make_tiny_lm(const WorkloadSpec& spec) {
  return std::make_unique<TinyLM>(spec);
}

}  // namespace mw
