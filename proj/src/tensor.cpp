#include "ndsg/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <string>

namespace ndsg {

namespace {

[[noreturn]] void shape_error(const std::string& msg) {
  throw Error(ErrorKind::Shape, msg);
}

std::string shape_str(const std::vector<int>& s) {
  std::string out = "[";
  for (size_t i = 0; i < s.size(); ++i) {
    if (i) out += ",";
    out += std::to_string(s[i]);
  }
  return out + "]";
}

bool any_requires_grad(std::initializer_list<const TensorPtr*> ts) {
  for (const TensorPtr* t : ts) {
    if (*t && (*t)->requires_grad) return true;
  }
  return false;
}

void prepare_grads(std::initializer_list<const TensorPtr*> ts) {
  for (const TensorPtr* t : ts) {
    if (*t && (*t)->requires_grad) (*t)->ensure_grad();
  }
}

}  // namespace

Tensor::Tensor(std::vector<int> s, bool rg) : shape(std::move(s)), requires_grad(rg) {
  data.assign(shape_numel(shape), 0.0f);
  if (requires_grad) grad.assign(data.size(), 0.0f);
}

Tensor Tensor::zeros(std::vector<int> s, bool rg) { return Tensor(std::move(s), rg); }

Tensor Tensor::from(std::vector<int> s, std::vector<float> values, bool rg) {
  Tensor t;
  t.shape = std::move(s);
  if (shape_numel(t.shape) != values.size()) {
    shape_error("tensor value count " + std::to_string(values.size()) +
                " does not match shape " + shape_str(t.shape));
  }
  t.data = std::move(values);
  t.requires_grad = rg;
  if (rg) t.grad.assign(t.data.size(), 0.0f);
  return t;
}

Tensor Tensor::scalar(float v, bool rg) { return from({1}, {v}, rg); }

void Tensor::ensure_grad() {
  if (grad.size() != data.size()) grad.assign(data.size(), 0.0f);
}

void Tensor::zero_grad() {
  if (!grad.empty()) std::fill(grad.begin(), grad.end(), 0.0f);
}

bool Tensor::all_finite() const {
  for (float v : data) {
    if (!std::isfinite(v)) return false;
  }
  return true;
}

TensorPtr make_tensor(std::vector<int> shape, bool rg) {
  return std::make_shared<Tensor>(Tensor::zeros(std::move(shape), rg));
}

TensorPtr make_tensor(std::vector<int> shape, std::vector<float> values, bool rg) {
  return std::make_shared<Tensor>(Tensor::from(std::move(shape), std::move(values), rg));
}

TensorPtr make_scalar(float v, bool rg) {
  return std::make_shared<Tensor>(Tensor::scalar(v, rg));
}

size_t shape_numel(const std::vector<int>& shape) {
  if (shape.empty()) shape_error("empty tensor shape");
  size_t n = 1;
  for (int d : shape) {
    if (d <= 0) shape_error("non-positive extent in shape " + shape_str(shape));
    n *= static_cast<size_t>(d);
  }
  return n;
}

void check_finite(const Tensor& t, const char* what) {
  if (!t.all_finite()) {
    throw Error(ErrorKind::Divergence,
                std::string("non-finite values in ") + what);
  }
}

void Tape::record(TensorPtr output, std::function<void()> backprop) {
  nodes_.push_back(Node{std::move(output), std::move(backprop)});
}

void Tape::backward(const TensorPtr& loss) {
  if (nodes_.empty()) {
    throw Error(ErrorKind::Config, "backward on an empty tape");
  }
  if (!loss || loss->size() != 1) {
    throw Error(ErrorKind::Shape, "backward requires a scalar loss");
  }
  // Intermediate gradients belong to this pass; leaves keep accumulating.
  for (Node& n : nodes_) {
    n.output->zero_grad();
  }
  loss->ensure_grad();
  loss->grad[0] = 1.0f;
  for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) {
    it->backprop();
  }
}

void Tape::clear() { nodes_.clear(); }

// ---------------------------------------------------------------- conv2d

TensorPtr conv2d(Tape& tape, const TensorPtr& input, const TensorPtr& weight,
                 const TensorPtr& bias, const Conv2dAttrs& attrs) {
  if (input->rank() != 4) shape_error("conv2d input must be [N,C,H,W], got " + shape_str(input->shape));
  if (weight->rank() != 4) shape_error("conv2d weight must be [d,c,s1,s2], got " + shape_str(weight->shape));
  const int n = input->dim(0), c = input->dim(1), h = input->dim(2), w = input->dim(3);
  const int f = weight->dim(0), wc = weight->dim(1), kh = weight->dim(2), kw = weight->dim(3);
  if (wc != c) shape_error("conv2d channel mismatch: input has " + std::to_string(c) +
                           ", weight expects " + std::to_string(wc));
  if (bias->rank() != 1 || bias->dim(0) != f) shape_error("conv2d bias must be [d]");
  const int stride = attrs.stride, pad = attrs.pad;
  if (stride < 1 || pad < 0) shape_error("conv2d needs stride >= 1, pad >= 0");
  const int oh = (h + 2 * pad - kh) / stride + 1;
  const int ow = (w + 2 * pad - kw) / stride + 1;
  if (oh < 1 || ow < 1 || kh > h + 2 * pad || kw > w + 2 * pad) {
    shape_error("conv2d kernel does not fit input");
  }
  check_finite(*input, "conv2d input");
  check_finite(*weight, "conv2d weight");
  check_finite(*bias, "conv2d bias");

  bool rg = any_requires_grad({&input, &weight, &bias});
  TensorPtr out = make_tensor({n, f, oh, ow}, rg);

  const float* x = input->data.data();
  const float* wd = weight->data.data();
  const float* bd = bias->data.data();
  float* y = out->data.data();

  auto in_at = [&](int ni, int ci, int hi, int wi) {
    return ((static_cast<size_t>(ni) * c + ci) * h + hi) * w + wi;
  };
  auto w_at = [&](int fi, int ci, int khi, int kwi) {
    return ((static_cast<size_t>(fi) * c + ci) * kh + khi) * kw + kwi;
  };

  for (int ni = 0; ni < n; ++ni) {
    for (int fi = 0; fi < f; ++fi) {
      for (int ohi = 0; ohi < oh; ++ohi) {
        for (int owi = 0; owi < ow; ++owi) {
          float acc = bd[fi];
          const int h0 = ohi * stride - pad;
          const int w0 = owi * stride - pad;
          for (int ci = 0; ci < c; ++ci) {
            for (int khi = 0; khi < kh; ++khi) {
              const int hi = h0 + khi;
              if (hi < 0 || hi >= h) continue;
              for (int kwi = 0; kwi < kw; ++kwi) {
                const int wi = w0 + kwi;
                if (wi < 0 || wi >= w) continue;
                acc += x[in_at(ni, ci, hi, wi)] * wd[w_at(fi, ci, khi, kwi)];
              }
            }
          }
          y[((static_cast<size_t>(ni) * f + fi) * oh + ohi) * ow + owi] = acc;
        }
      }
    }
  }

  if (rg) {
    prepare_grads({&input, &weight, &bias});
    TensorPtr in_c = input, w_c = weight, b_c = bias, out_c = out;
    tape.record(out, [in_c, w_c, b_c, out_c, stride, pad, n, c, h, w, f, kh, kw, oh, ow]() {
      const float* x = in_c->data.data();
      const float* wd = w_c->data.data();
      const float* gy = out_c->grad.data();
      float* gx = in_c->requires_grad ? in_c->grad.data() : nullptr;
      float* gw = w_c->requires_grad ? w_c->grad.data() : nullptr;
      float* gb = b_c->requires_grad ? b_c->grad.data() : nullptr;
      auto in_at = [&](int ni, int ci, int hi, int wi) {
        return ((static_cast<size_t>(ni) * c + ci) * h + hi) * w + wi;
      };
      auto w_at = [&](int fi, int ci, int khi, int kwi) {
        return ((static_cast<size_t>(fi) * c + ci) * kh + khi) * kw + kwi;
      };
      for (int ni = 0; ni < n; ++ni) {
        for (int fi = 0; fi < f; ++fi) {
          for (int ohi = 0; ohi < oh; ++ohi) {
            for (int owi = 0; owi < ow; ++owi) {
              const float g = gy[((static_cast<size_t>(ni) * f + fi) * oh + ohi) * ow + owi];
              if (g == 0.0f) continue;
              if (gb) gb[fi] += g;
              const int h0 = ohi * stride - pad;
              const int w0 = owi * stride - pad;
              for (int ci = 0; ci < c; ++ci) {
                for (int khi = 0; khi < kh; ++khi) {
                  const int hi = h0 + khi;
                  if (hi < 0 || hi >= h) continue;
                  for (int kwi = 0; kwi < kw; ++kwi) {
                    const int wi = w0 + kwi;
                    if (wi < 0 || wi >= w) continue;
                    if (gx) gx[in_at(ni, ci, hi, wi)] += g * wd[w_at(fi, ci, khi, kwi)];
                    if (gw) gw[w_at(fi, ci, khi, kwi)] += g * x[in_at(ni, ci, hi, wi)];
                  }
                }
              }
            }
          }
        }
      }
    });
  }
  return out;
}

// ---------------------------------------------------------------- dense

TensorPtr dense(Tape& tape, const TensorPtr& input, const TensorPtr& weight,
                const TensorPtr& bias) {
  if (input->rank() < 2) shape_error("dense input must have a batch dimension");
  if (weight->rank() != 2) shape_error("dense weight must be [out,in]");
  const int n = input->dim(0);
  const size_t in_w = input->size() / static_cast<size_t>(n);
  const int o = weight->dim(0);
  const size_t expect = static_cast<size_t>(weight->dim(1));
  if (in_w != expect) {
    shape_error("dense expects input width " + std::to_string(expect) +
                ", got " + std::to_string(in_w) + " from " + shape_str(input->shape));
  }
  if (bias->rank() != 1 || bias->dim(0) != o) shape_error("dense bias must be [out]");
  check_finite(*input, "dense input");
  check_finite(*weight, "dense weight");
  check_finite(*bias, "dense bias");

  bool rg = any_requires_grad({&input, &weight, &bias});
  TensorPtr out = make_tensor({n, o}, rg);
  const float* x = input->data.data();
  const float* wd = weight->data.data();
  const float* bd = bias->data.data();
  float* y = out->data.data();
  for (int ni = 0; ni < n; ++ni) {
    const float* xr = x + static_cast<size_t>(ni) * in_w;
    for (int oi = 0; oi < o; ++oi) {
      const float* wr = wd + static_cast<size_t>(oi) * in_w;
      float acc = bd[oi];
      for (size_t ii = 0; ii < in_w; ++ii) acc += xr[ii] * wr[ii];
      y[static_cast<size_t>(ni) * o + oi] = acc;
    }
  }

  if (rg) {
    prepare_grads({&input, &weight, &bias});
    TensorPtr in_c = input, w_c = weight, b_c = bias, out_c = out;
    tape.record(out, [in_c, w_c, b_c, out_c, n, o, in_w]() {
      const float* x = in_c->data.data();
      const float* wd = w_c->data.data();
      const float* gy = out_c->grad.data();
      float* gx = in_c->requires_grad ? in_c->grad.data() : nullptr;
      float* gw = w_c->requires_grad ? w_c->grad.data() : nullptr;
      float* gb = b_c->requires_grad ? b_c->grad.data() : nullptr;
      for (int ni = 0; ni < n; ++ni) {
        const float* xr = x + static_cast<size_t>(ni) * in_w;
        float* gxr = gx ? gx + static_cast<size_t>(ni) * in_w : nullptr;
        for (int oi = 0; oi < o; ++oi) {
          const float g = gy[static_cast<size_t>(ni) * o + oi];
          if (g == 0.0f) continue;
          if (gb) gb[oi] += g;
          const float* wr = wd + static_cast<size_t>(oi) * in_w;
          float* gwr = gw ? gw + static_cast<size_t>(oi) * in_w : nullptr;
          for (size_t ii = 0; ii < in_w; ++ii) {
            if (gxr) gxr[ii] += g * wr[ii];
            if (gwr) gwr[ii] += g * xr[ii];
          }
        }
      }
    });
  }
  return out;
}

// ---------------------------------------------------------------- batchnorm

TensorPtr batchnorm(Tape& tape, const TensorPtr& input, const TensorPtr& gamma,
                    const TensorPtr& beta, const TensorPtr& running_mean,
                    const TensorPtr& running_var, const BatchNormAttrs& attrs) {
  if (input->rank() != 2 && input->rank() != 4) {
    shape_error("batchnorm input must be [N,C] or [N,C,H,W]");
  }
  const int n = input->dim(0);
  const int c = input->dim(1);
  const int spatial = input->rank() == 4 ? input->dim(2) * input->dim(3) : 1;
  auto want_c = [&](const TensorPtr& t, const char* name) {
    if (t->rank() != 1 || t->dim(0) != c) {
      shape_error(std::string("batchnorm ") + name + " must be [C]");
    }
  };
  want_c(gamma, "gamma");
  want_c(beta, "beta");
  want_c(running_mean, "running_mean");
  want_c(running_var, "running_var");
  check_finite(*input, "batchnorm input");

  const size_t m = static_cast<size_t>(n) * static_cast<size_t>(spatial);
  const float eps = attrs.eps;
  const bool use_batch = attrs.mode != BnMode::Eval;

  std::vector<float> mu(c), invstd(c);
  if (use_batch) {
    for (int ci = 0; ci < c; ++ci) {
      double sum = 0.0;
      for (int ni = 0; ni < n; ++ni) {
        const float* xc = input->data.data() +
                          (static_cast<size_t>(ni) * c + ci) * spatial;
        for (int si = 0; si < spatial; ++si) sum += xc[si];
      }
      const double mean = sum / static_cast<double>(m);
      double var = 0.0;
      for (int ni = 0; ni < n; ++ni) {
        const float* xc = input->data.data() +
                          (static_cast<size_t>(ni) * c + ci) * spatial;
        for (int si = 0; si < spatial; ++si) {
          const double d = xc[si] - mean;
          var += d * d;
        }
      }
      var /= static_cast<double>(m);  // biased estimator
      mu[ci] = static_cast<float>(mean);
      invstd[ci] = static_cast<float>(1.0 / std::sqrt(var + eps));
      if (attrs.mode == BnMode::Train) {
        const float mom = attrs.momentum;
        running_mean->data[ci] = (1.0f - mom) * running_mean->data[ci] +
                                 mom * static_cast<float>(mean);
        running_var->data[ci] = (1.0f - mom) * running_var->data[ci] +
                                mom * static_cast<float>(var);
      }
    }
  } else {
    for (int ci = 0; ci < c; ++ci) {
      mu[ci] = running_mean->data[ci];
      invstd[ci] = 1.0f / std::sqrt(running_var->data[ci] + eps);
    }
  }

  bool rg = any_requires_grad({&input, &gamma, &beta});
  TensorPtr out = make_tensor(input->shape, rg);
  for (int ni = 0; ni < n; ++ni) {
    for (int ci = 0; ci < c; ++ci) {
      const float* xc = input->data.data() + (static_cast<size_t>(ni) * c + ci) * spatial;
      float* yc = out->data.data() + (static_cast<size_t>(ni) * c + ci) * spatial;
      const float g = gamma->data[ci], b = beta->data[ci];
      const float mean = mu[ci], is = invstd[ci];
      for (int si = 0; si < spatial; ++si) {
        yc[si] = g * (xc[si] - mean) * is + b;
      }
    }
  }

  if (rg) {
    prepare_grads({&input, &gamma, &beta});
    TensorPtr in_c = input, g_c = gamma, b_c = beta, out_c = out;
    std::vector<float> mu_c = mu, is_c = invstd;
    tape.record(out, [in_c, g_c, b_c, out_c, mu_c, is_c, n, c, spatial, m, use_batch]() {
      const float* x = in_c->data.data();
      const float* gy = out_c->grad.data();
      float* gx = in_c->requires_grad ? in_c->grad.data() : nullptr;
      float* gg = g_c->requires_grad ? g_c->grad.data() : nullptr;
      float* gb = b_c->requires_grad ? b_c->grad.data() : nullptr;
      for (int ci = 0; ci < c; ++ci) {
        const float mean = mu_c[ci], is = is_c[ci], gam = g_c->data[ci];
        double sum_dy = 0.0, sum_dy_xhat = 0.0;
        for (int ni = 0; ni < n; ++ni) {
          const size_t base = (static_cast<size_t>(ni) * c + ci) * spatial;
          for (int si = 0; si < spatial; ++si) {
            const float dy = gy[base + si];
            sum_dy += dy;
            sum_dy_xhat += dy * (x[base + si] - mean) * is;
          }
        }
        if (gg) gg[ci] += static_cast<float>(sum_dy_xhat);
        if (gb) gb[ci] += static_cast<float>(sum_dy);
        if (!gx) continue;
        if (use_batch) {
          const float inv_m = 1.0f / static_cast<float>(m);
          for (int ni = 0; ni < n; ++ni) {
            const size_t base = (static_cast<size_t>(ni) * c + ci) * spatial;
            for (int si = 0; si < spatial; ++si) {
              const float xhat = (x[base + si] - mean) * is;
              const float dy = gy[base + si];
              gx[base + si] += gam * is * inv_m *
                               (static_cast<float>(m) * dy -
                                static_cast<float>(sum_dy) -
                                xhat * static_cast<float>(sum_dy_xhat));
            }
          }
        } else {
          for (int ni = 0; ni < n; ++ni) {
            const size_t base = (static_cast<size_t>(ni) * c + ci) * spatial;
            for (int si = 0; si < spatial; ++si) {
              gx[base + si] += gy[base + si] * gam * is;
            }
          }
        }
      }
    });
  }
  return out;
}

// ---------------------------------------------------------------- relu

TensorPtr relu(Tape& tape, const TensorPtr& input) {
  check_finite(*input, "relu input");
  bool rg = input->requires_grad;
  TensorPtr out = make_tensor(input->shape, rg);
  for (size_t i = 0; i < input->size(); ++i) {
    out->data[i] = input->data[i] > 0.0f ? input->data[i] : 0.0f;
  }
  if (rg) {
    prepare_grads({&input});
    TensorPtr in_c = input, out_c = out;
    tape.record(out, [in_c, out_c]() {
      for (size_t i = 0; i < in_c->size(); ++i) {
        if (in_c->data[i] > 0.0f) in_c->grad[i] += out_c->grad[i];
      }
    });
  }
  return out;
}

// ---------------------------------------------------------------- pooling

TensorPtr maxpool2x2(Tape& tape, const TensorPtr& input) {
  if (input->rank() != 4) shape_error("maxpool2x2 input must be [N,C,H,W]");
  const int n = input->dim(0), c = input->dim(1), h = input->dim(2), w = input->dim(3);
  if (h < 2 || w < 2) shape_error("maxpool2x2 needs H,W >= 2");
  check_finite(*input, "maxpool2x2 input");
  const int oh = h / 2, ow = w / 2;
  bool rg = input->requires_grad;
  TensorPtr out = make_tensor({n, c, oh, ow}, rg);
  auto argmax = std::make_shared<std::vector<uint32_t>>(out->size());
  for (int ni = 0; ni < n; ++ni) {
    for (int ci = 0; ci < c; ++ci) {
      const size_t in_base = (static_cast<size_t>(ni) * c + ci) * h * w;
      const size_t out_base = (static_cast<size_t>(ni) * c + ci) * oh * ow;
      for (int ohi = 0; ohi < oh; ++ohi) {
        for (int owi = 0; owi < ow; ++owi) {
          size_t best = in_base + static_cast<size_t>(2 * ohi) * w + 2 * owi;
          float bv = input->data[best];
          for (int dh = 0; dh < 2; ++dh) {
            for (int dw = 0; dw < 2; ++dw) {
              const size_t idx = in_base + static_cast<size_t>(2 * ohi + dh) * w + 2 * owi + dw;
              if (input->data[idx] > bv) {
                bv = input->data[idx];
                best = idx;
              }
            }
          }
          out->data[out_base + static_cast<size_t>(ohi) * ow + owi] = bv;
          (*argmax)[out_base + static_cast<size_t>(ohi) * ow + owi] = static_cast<uint32_t>(best);
        }
      }
    }
  }
  if (rg) {
    prepare_grads({&input});
    TensorPtr in_c = input, out_c = out;
    tape.record(out, [in_c, out_c, argmax]() {
      for (size_t i = 0; i < out_c->size(); ++i) {
        in_c->grad[(*argmax)[i]] += out_c->grad[i];
      }
    });
  }
  return out;
}

TensorPtr avgpool_global(Tape& tape, const TensorPtr& input) {
  if (input->rank() != 4) shape_error("avgpool_global input must be [N,C,H,W]");
  const int n = input->dim(0), c = input->dim(1);
  const int spatial = input->dim(2) * input->dim(3);
  check_finite(*input, "avgpool_global input");
  bool rg = input->requires_grad;
  TensorPtr out = make_tensor({n, c}, rg);
  for (int ni = 0; ni < n; ++ni) {
    for (int ci = 0; ci < c; ++ci) {
      const float* xc = input->data.data() + (static_cast<size_t>(ni) * c + ci) * spatial;
      double sum = 0.0;
      for (int si = 0; si < spatial; ++si) sum += xc[si];
      out->data[static_cast<size_t>(ni) * c + ci] =
          static_cast<float>(sum / static_cast<double>(spatial));
    }
  }
  if (rg) {
    prepare_grads({&input});
    TensorPtr in_c = input, out_c = out;
    tape.record(out, [in_c, out_c, n, c, spatial]() {
      const float inv = 1.0f / static_cast<float>(spatial);
      for (int ni = 0; ni < n; ++ni) {
        for (int ci = 0; ci < c; ++ci) {
          const float g = out_c->grad[static_cast<size_t>(ni) * c + ci] * inv;
          float* gc = in_c->grad.data() + (static_cast<size_t>(ni) * c + ci) * spatial;
          for (int si = 0; si < spatial; ++si) gc[si] += g;
        }
      }
    });
  }
  return out;
}

// ---------------------------------------------------------------- losses

TensorPtr softmax_crossentropy(Tape& tape, const TensorPtr& logits,
                               const TensorPtr& labels) {
  if (logits->rank() != 2) shape_error("softmax_crossentropy logits must be [N,K]");
  const int n = logits->dim(0), k = logits->dim(1);
  if (labels->size() != static_cast<size_t>(n)) {
    shape_error("softmax_crossentropy labels must hold one class id per row");
  }
  check_finite(*logits, "softmax_crossentropy logits");

  auto probs = std::make_shared<std::vector<float>>(logits->size());
  auto classes = std::make_shared<std::vector<int>>(n);
  double total = 0.0;
  for (int ni = 0; ni < n; ++ni) {
    const float lab = labels->data[static_cast<size_t>(ni)];
    const int y = static_cast<int>(lab);
    if (y < 0 || y >= k || static_cast<float>(y) != lab) {
      shape_error("softmax_crossentropy label out of range");
    }
    (*classes)[ni] = y;
    const float* row = logits->data.data() + static_cast<size_t>(ni) * k;
    float mx = row[0];
    for (int ki = 1; ki < k; ++ki) mx = std::max(mx, row[ki]);
    double denom = 0.0;
    for (int ki = 0; ki < k; ++ki) denom += std::exp(static_cast<double>(row[ki] - mx));
    const double lse = static_cast<double>(mx) + std::log(denom);
    total += lse - static_cast<double>(row[y]);
    for (int ki = 0; ki < k; ++ki) {
      (*probs)[static_cast<size_t>(ni) * k + ki] =
          static_cast<float>(std::exp(static_cast<double>(row[ki]) - lse));
    }
  }
  bool rg = logits->requires_grad;
  TensorPtr out = make_scalar(static_cast<float>(total / n), rg);
  if (rg) {
    prepare_grads({&logits});
    TensorPtr lg = logits, out_c = out;
    tape.record(out, [lg, out_c, probs, classes, n, k]() {
      const float scale = out_c->grad[0] / static_cast<float>(n);
      for (int ni = 0; ni < n; ++ni) {
        for (int ki = 0; ki < k; ++ki) {
          const float p = (*probs)[static_cast<size_t>(ni) * k + ki];
          const float ind = ki == (*classes)[ni] ? 1.0f : 0.0f;
          lg->grad[static_cast<size_t>(ni) * k + ki] += scale * (p - ind);
        }
      }
    });
  }
  return out;
}

TensorPtr mse(Tape& tape, const TensorPtr& prediction, const TensorPtr& target) {
  if (prediction->size() != target->size()) {
    shape_error("mse operands must have the same element count");
  }
  check_finite(*prediction, "mse prediction");
  check_finite(*target, "mse target");
  const size_t count = prediction->size();
  double total = 0.0;
  for (size_t i = 0; i < count; ++i) {
    const double d = static_cast<double>(prediction->data[i]) - target->data[i];
    total += d * d;
  }
  bool rg = any_requires_grad({&prediction, &target});
  TensorPtr out = make_scalar(static_cast<float>(total / static_cast<double>(count)), rg);
  if (rg) {
    prepare_grads({&prediction, &target});
    TensorPtr p = prediction, t = target, out_c = out;
    tape.record(out, [p, t, out_c, count]() {
      const float scale = out_c->grad[0] * 2.0f / static_cast<float>(count);
      for (size_t i = 0; i < count; ++i) {
        const float d = p->data[i] - t->data[i];
        if (p->requires_grad) p->grad[i] += scale * d;
        if (t->requires_grad) t->grad[i] -= scale * d;
      }
    });
  }
  return out;
}

TensorPtr sigmoid_bce(Tape& tape, const TensorPtr& logits, const TensorPtr& targets) {
  if (logits->size() != targets->size()) {
    shape_error("sigmoid_bce operands must have the same element count");
  }
  check_finite(*logits, "sigmoid_bce logits");
  check_finite(*targets, "sigmoid_bce targets");
  const size_t count = logits->size();
  double total = 0.0;
  for (size_t i = 0; i < count; ++i) {
    const double x = logits->data[i];
    const double t = targets->data[i];
    if (t < 0.0 || t > 1.0) shape_error("sigmoid_bce targets must lie in [0,1]");
    total += std::max(x, 0.0) - x * t + std::log1p(std::exp(-std::abs(x)));
  }
  bool rg = logits->requires_grad;
  TensorPtr out = make_scalar(static_cast<float>(total / static_cast<double>(count)), rg);
  if (rg) {
    prepare_grads({&logits});
    TensorPtr lg = logits, tg = targets, out_c = out;
    tape.record(out, [lg, tg, out_c, count]() {
      const float scale = out_c->grad[0] / static_cast<float>(count);
      for (size_t i = 0; i < count; ++i) {
        const double x = lg->data[i];
        const double s = 1.0 / (1.0 + std::exp(-x));
        lg->grad[i] += scale * static_cast<float>(s - tg->data[i]);
      }
    });
  }
  return out;
}

// ---------------------------------------------------------------- dispatch

TensorPtr forward_op(Tape& tape, std::string_view op,
                     const std::vector<TensorPtr>& inputs, const OpAttrs& attrs) {
  auto need = [&](size_t k) {
    if (inputs.size() != k) {
      shape_error(std::string(op) + " expects " + std::to_string(k) + " inputs");
    }
  };
  if (op == "conv2d") {
    need(3);
    return conv2d(tape, inputs[0], inputs[1], inputs[2], attrs.conv);
  }
  if (op == "dense") {
    need(3);
    return dense(tape, inputs[0], inputs[1], inputs[2]);
  }
  if (op == "batchnorm") {
    need(5);
    return batchnorm(tape, inputs[0], inputs[1], inputs[2], inputs[3], inputs[4], attrs.bn);
  }
  if (op == "relu") {
    need(1);
    return relu(tape, inputs[0]);
  }
  if (op == "maxpool2x2") {
    need(1);
    return maxpool2x2(tape, inputs[0]);
  }
  if (op == "avgpool_global") {
    need(1);
    return avgpool_global(tape, inputs[0]);
  }
  if (op == "softmax_crossentropy") {
    need(2);
    return softmax_crossentropy(tape, inputs[0], inputs[1]);
  }
  if (op == "mse") {
    need(2);
    return mse(tape, inputs[0], inputs[1]);
  }
  if (op == "sigmoid_bce") {
    need(2);
    return sigmoid_bce(tape, inputs[0], inputs[1]);
  }
  throw Error(ErrorKind::Config, "unknown op: " + std::string(op));
}

// ---------------------------------------------------------------- adam

Adam::Adam(std::vector<TensorPtr> params, Hyper hyper,
           std::vector<std::vector<uint32_t>> trainable)
    : params_(std::move(params)), hyper_(hyper), trainable_(std::move(trainable)) {
  if (!trainable_.empty() && trainable_.size() != params_.size()) {
    throw Error(ErrorKind::Config, "adam trainable lists must align with params");
  }
  if (trainable_.empty()) trainable_.resize(params_.size());
  for (size_t pi = 0; pi < params_.size(); ++pi) {
    if (trainable_[pi].empty()) {
      trainable_[pi].resize(params_[pi]->size());
      for (uint32_t i = 0; i < trainable_[pi].size(); ++i) trainable_[pi][i] = i;
    }
    m_.emplace_back(trainable_[pi].size(), 0.0f);
    v_.emplace_back(trainable_[pi].size(), 0.0f);
  }
}

void Adam::step() {
  ++t_;
  const double bc1 = 1.0 - std::pow(static_cast<double>(hyper_.beta1), static_cast<double>(t_));
  const double bc2 = 1.0 - std::pow(static_cast<double>(hyper_.beta2), static_cast<double>(t_));
  for (size_t pi = 0; pi < params_.size(); ++pi) {
    Tensor& p = *params_[pi];
    if (p.grad.size() != p.data.size()) {
      throw Error(ErrorKind::Config, "adam_step: parameter is missing its gradient");
    }
    float* m = m_[pi].data();
    float* v = v_[pi].data();
    const std::vector<uint32_t>& idx = trainable_[pi];
    for (size_t k = 0; k < idx.size(); ++k) {
      const uint32_t i = idx[k];
      const float g = p.grad[i];
      m[k] = hyper_.beta1 * m[k] + (1.0f - hyper_.beta1) * g;
      v[k] = hyper_.beta2 * v[k] + (1.0f - hyper_.beta2) * g * g;
      const float mhat = static_cast<float>(m[k] / bc1);
      const float vhat = static_cast<float>(v[k] / bc2);
      p.data[i] -= hyper_.lr * mhat / (std::sqrt(vhat) + hyper_.eps);
    }
  }
}

void Adam::zero_grad() {
  for (const TensorPtr& p : params_) p->zero_grad();
}

// ---------------------------------------------------------------- init

int fan_in_of(const std::vector<int>& shape) {
  if (shape.size() < 2) {
    throw Error(ErrorKind::Config, "kaiming_init needs a weight shape of rank >= 2");
  }
  long long fan = 1;
  for (size_t i = 1; i < shape.size(); ++i) fan *= shape[i];
  if (fan <= 0) throw Error(ErrorKind::Config, "kaiming_init: zero fan-in");
  return static_cast<int>(fan);
}

Tensor kaiming_init(const std::vector<int>& shape, Rng& rng) {
  const int fan = fan_in_of(shape);
  const float stddev = std::sqrt(2.0f / static_cast<float>(fan));
  Tensor t = Tensor::zeros(shape);
  for (float& v : t.data) v = rng.normal_f(stddev);
  return t;
}

}  // namespace ndsg
