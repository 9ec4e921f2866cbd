#include "xmdpt/metrics.hpp"

#include <cmath>
#include <fstream>
#include <iomanip>
#include <stdexcept>

namespace xmdpt {

namespace {

void require_same_image_shape(const Tensor<float>& a, const Tensor<float>& b,
                              const char* who) {
  if (a.shape() != b.shape())
    throw std::invalid_argument(std::string(who) + ": shape mismatch " +
                                shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  if (a.rank() != 2 && a.rank() != 3)
    throw std::invalid_argument(std::string(who) + ": expected [H, W] or [H, W, C], got " +
                                shape_str(a.shape()));
}

double cosine(const std::vector<double>& a, const std::vector<double>& b) {
  double dot = 0.0, na = 0.0, nb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    dot += a[i] * b[i];
    na += a[i] * a[i];
    nb += b[i] * b[i];
  }
  if (na == 0.0 || nb == 0.0)
    throw std::invalid_argument("similarity_stats: zero condition vector");
  return dot / (std::sqrt(na) * std::sqrt(nb));
}

// c = a * b for square row-major matrices.
std::vector<double> matmul_sq(const std::vector<double>& a,
                              const std::vector<double>& b, std::size_t n) {
  std::vector<double> c(n * n, 0.0);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t k = 0; k < n; ++k) {
      const double aik = a[i * n + k];
      if (aik == 0.0) continue;
      for (std::size_t j = 0; j < n; ++j) c[i * n + j] += aik * b[k * n + j];
    }
  return c;
}

constexpr double kEigenClamp = 1e-10;

}  // namespace

double ssim(const Tensor<float>& a, const Tensor<float>& b, int window) {
  require_same_image_shape(a, b, "ssim");
  const int h = static_cast<int>(a.dim(0));
  const int w = static_cast<int>(a.dim(1));
  const int ch = a.rank() == 3 ? static_cast<int>(a.dim(2)) : 1;
  if (window < 2 || h < window || w < window)
    throw std::invalid_argument("ssim: window " + std::to_string(window) +
                                " does not fit " + shape_str(a.shape()));

  constexpr double c1 = 0.01 * 0.01;
  constexpr double c2 = 0.03 * 0.03;
  const double inv_n = 1.0 / (double(window) * window);
  const float* pa = a.data();
  const float* pb = b.data();
  auto at = [&](const float* p, int y, int x, int c) {
    return double(p[(std::size_t(y) * w + x) * ch + c]);
  };

  double acc = 0.0;
  long windows = 0;
  for (int c = 0; c < ch; ++c)
    for (int y0 = 0; y0 + window <= h; ++y0)
      for (int x0 = 0; x0 + window <= w; ++x0) {
        double sa = 0, sb = 0, saa = 0, sbb = 0, sab = 0;
        for (int y = y0; y < y0 + window; ++y)
          for (int x = x0; x < x0 + window; ++x) {
            const double va = at(pa, y, x, c), vb = at(pb, y, x, c);
            sa += va;
            sb += vb;
            saa += va * va;
            sbb += vb * vb;
            sab += va * vb;
          }
        const double ma = sa * inv_n, mb = sb * inv_n;
        const double var_a = saa * inv_n - ma * ma;
        const double var_b = sbb * inv_n - mb * mb;
        const double cov = sab * inv_n - ma * mb;
        acc += ((2.0 * ma * mb + c1) * (2.0 * cov + c2)) /
               ((ma * ma + mb * mb + c1) * (var_a + var_b + c2));
        ++windows;
      }
  return acc / double(windows);
}

double psnr(const Tensor<float>& a, const Tensor<float>& b) {
  require_same_image_shape(a, b, "psnr");
  double mse = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double d = double(a[i]) - double(b[i]);
    mse += d * d;
  }
  mse /= double(a.size());
  if (mse <= 0.0) return 99.0;
  return std::min(99.0, 10.0 * std::log10(1.0 / mse));
}

FrechetStats FrechetStats::from_rows(const std::vector<std::vector<double>>& rows) {
  if (rows.size() < 2)
    throw std::invalid_argument("FrechetStats: need at least 2 samples, got " +
                                std::to_string(rows.size()));
  FrechetStats st;
  st.dim = rows[0].size();
  st.count = rows.size();
  for (const auto& r : rows)
    if (r.size() != st.dim)
      throw std::invalid_argument("FrechetStats: ragged embedding rows");

  st.mean.assign(st.dim, 0.0);
  for (const auto& r : rows)
    for (std::size_t i = 0; i < st.dim; ++i) st.mean[i] += r[i];
  for (auto& m : st.mean) m /= double(st.count);

  st.cov.assign(st.dim * st.dim, 0.0);
  for (const auto& r : rows)
    for (std::size_t i = 0; i < st.dim; ++i) {
      const double di = r[i] - st.mean[i];
      for (std::size_t j = i; j < st.dim; ++j)
        st.cov[i * st.dim + j] += di * (r[j] - st.mean[j]);
    }
  const double norm = 1.0 / double(st.count - 1);
  for (std::size_t i = 0; i < st.dim; ++i)
    for (std::size_t j = i; j < st.dim; ++j) {
      st.cov[i * st.dim + j] *= norm;
      st.cov[j * st.dim + i] = st.cov[i * st.dim + j];
    }
  return st;
}

std::vector<double> symmetric_eigen(std::vector<double> m, std::size_t n,
                                    std::vector<double>* vectors) {
  if (m.size() != n * n)
    throw std::invalid_argument("symmetric_eigen: matrix size does not match n");
  std::vector<double> v;
  if (vectors) {
    v.assign(n * n, 0.0);
    for (std::size_t i = 0; i < n; ++i) v[i * n + i] = 1.0;
  }

  for (int sweep = 0; sweep < 100; ++sweep) {
    double off = 0.0, diag = 0.0;
    for (std::size_t p = 0; p < n; ++p) {
      diag += m[p * n + p] * m[p * n + p];
      for (std::size_t q = p + 1; q < n; ++q) off += m[p * n + q] * m[p * n + q];
    }
    if (off <= 1e-28 * std::max(1.0, diag)) break;

    for (std::size_t p = 0; p + 1 < n; ++p)
      for (std::size_t q = p + 1; q < n; ++q) {
        const double apq = m[p * n + q];
        if (apq == 0.0) continue;
        const double theta = (m[q * n + q] - m[p * n + p]) / (2.0 * apq);
        double t;
        if (std::fabs(theta) > 1e12) {
          t = 0.5 / theta;
        } else {
          t = 1.0 / (std::fabs(theta) + std::sqrt(theta * theta + 1.0));
          if (theta < 0.0) t = -t;
        }
        const double c = 1.0 / std::sqrt(t * t + 1.0);
        const double s = t * c;

        const double app = m[p * n + p], aqq = m[q * n + q];
        m[p * n + p] = app - t * apq;
        m[q * n + q] = aqq + t * apq;
        m[p * n + q] = 0.0;
        m[q * n + p] = 0.0;
        for (std::size_t i = 0; i < n; ++i) {
          if (i == p || i == q) continue;
          const double aip = m[i * n + p], aiq = m[i * n + q];
          m[i * n + p] = c * aip - s * aiq;
          m[p * n + i] = m[i * n + p];
          m[i * n + q] = s * aip + c * aiq;
          m[q * n + i] = m[i * n + q];
        }
        if (vectors)
          for (std::size_t i = 0; i < n; ++i) {
            const double vip = v[i * n + p], viq = v[i * n + q];
            v[i * n + p] = c * vip - s * viq;
            v[i * n + q] = s * vip + c * viq;
          }
      }
  }

  std::vector<double> values(n);
  for (std::size_t i = 0; i < n; ++i) values[i] = m[i * n + i];
  if (vectors) *vectors = std::move(v);
  return values;
}

double frechet_distance(const FrechetStats& a, const FrechetStats& b) {
  if (a.dim != b.dim || a.dim == 0)
    throw std::invalid_argument("frechet_distance: dimension mismatch " +
                                std::to_string(a.dim) + " vs " + std::to_string(b.dim));
  for (const auto* st : {&a, &b}) {
    for (double x : st->mean)
      if (!std::isfinite(x)) throw std::invalid_argument("frechet_distance: non-finite mean");
    for (double x : st->cov)
      if (!std::isfinite(x))
        throw std::invalid_argument("frechet_distance: non-finite covariance");
  }
  const std::size_t n = a.dim;

  double d2 = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double d = a.mean[i] - b.mean[i];
    d2 += d * d;
  }
  double tr_a = 0.0, tr_b = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    tr_a += a.cov[i * n + i];
    tr_b += b.cov[i * n + i];
  }

  // sqrt(S_a) through its eigendecomposition, then the trace of the square
  // root of the symmetrised product sqrt(S_a) S_b sqrt(S_a).
  std::vector<double> vecs;
  std::vector<double> vals = symmetric_eigen(a.cov, n, &vecs);
  std::vector<double> root(n * n, 0.0);
  for (std::size_t k = 0; k < n; ++k) {
    const double lam = vals[k] < kEigenClamp ? 0.0 : std::sqrt(vals[k]);
    if (lam == 0.0) continue;
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < n; ++j)
        root[i * n + j] += lam * vecs[i * n + k] * vecs[j * n + k];
  }
  std::vector<double> prod = matmul_sq(matmul_sq(root, b.cov, n), root, n);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = i + 1; j < n; ++j) {
      const double sym = 0.5 * (prod[i * n + j] + prod[j * n + i]);
      prod[i * n + j] = sym;
      prod[j * n + i] = sym;
    }
  std::vector<double> pvals = symmetric_eigen(std::move(prod), n);
  double tr_root = 0.0;
  for (double lam : pvals)
    if (lam > kEigenClamp) tr_root += std::sqrt(lam);

  return std::max(0.0, d2 + tr_a + tr_b - 2.0 * tr_root);
}

std::vector<double> cls_embedding(const ToyFeaturizer& featurizer, const Image& img) {
  NoGrad<float> ng;
  const Tensor<float> tokens = featurizer.forward(img);
  const std::size_t width = tokens.dim(1);
  std::vector<double> out(width);
  for (std::size_t i = 0; i < width; ++i) out[i] = double(tokens[i]);
  return out;
}

SimilarityRow similarity_stats(
    long step,
    const std::function<std::vector<double>(int identity, int view)>& cond_of,
    int identities, int views) {
  if (identities < 2 || views < 2)
    throw std::invalid_argument("similarity_stats: need >= 2 identities and >= 2 views");

  std::vector<std::vector<std::vector<double>>> c(identities);
  for (int id = 0; id < identities; ++id) {
    c[id].resize(views);
    for (int view = 0; view < views; ++view) c[id][view] = cond_of(id, view);
  }

  SimilarityRow row;
  row.step = step;
  double same = 0.0;
  long same_n = 0;
  for (int id = 0; id < identities; ++id)
    for (int i = 0; i < views; ++i)
      for (int j = i + 1; j < views; ++j) {
        same += cosine(c[id][i], c[id][j]);
        ++same_n;
      }
  double cross = 0.0;
  long cross_n = 0;
  for (int view = 0; view < views; ++view)
    for (int k = 0; k < identities; ++k)
      for (int m = k + 1; m < identities; ++m) {
        cross += cosine(c[k][view], c[m][view]);
        ++cross_n;
      }
  row.mean_same_id = same / double(same_n);
  row.mean_cross_id = cross / double(cross_n);
  return row;
}

void write_similarity_csv(const std::string& path,
                          const std::vector<SimilarityRow>& rows) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path);
  out << "step,mean_same_id,mean_cross_id\n";
  out << std::setprecision(17);
  for (const auto& r : rows)
    out << r.step << "," << r.mean_same_id << "," << r.mean_cross_id << "\n";
  if (!out) throw std::runtime_error("write failed: " + path);
}

}  // namespace xmdpt
