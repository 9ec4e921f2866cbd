#pragma once

#include <cstddef>
#include <functional>
#include <string>
#include <vector>

#include "xmdpt/canet.hpp"
#include "xmdpt/tensor.hpp"
#include "xmdpt/toyworld.hpp"

// Image quality scores, a Frechet distance over frozen-featurizer embeddings,
// and the condition-similarity statistics logged during training. Everything
// here is pure; nothing touches the tape.

namespace xmdpt {

// Windowed structural similarity with a uniform window and the standard
// constants (K1=0.01, K2=0.03 on a unit dynamic range), averaged over all
// channels and window positions. Accepts [H, W] or [H, W, C] in [0, 1].
double ssim(const Tensor<float>& a, const Tensor<float>& b, int window = 7);

// 10 log10(1 / MSE), capped at 99.0 dB (the cap also reports equality).
double psnr(const Tensor<float>& a, const Tensor<float>& b);

// Mean and unbiased covariance of a set of embedding vectors.
struct FrechetStats {
  std::size_t dim = 0;
  std::size_t count = 0;
  std::vector<double> mean;  // [dim]
  std::vector<double> cov;   // [dim * dim], symmetric

  static FrechetStats from_rows(const std::vector<std::vector<double>>& rows);
};

// Squared Wasserstein-2 between the Gaussians the stats describe:
// |mu1-mu2|^2 + tr(S1 + S2 - 2 (S1 S2)^{1/2}); tiny negative eigenvalues of
// the symmetrised product are clamped to zero.
double frechet_distance(const FrechetStats& a, const FrechetStats& b);

// Cyclic Jacobi eigendecomposition of a symmetric row-major matrix. Returns
// eigenvalues (unordered); vectors, if requested, holds the matching
// eigenvectors as columns.
std::vector<double> symmetric_eigen(std::vector<double> m, std::size_t n,
                                    std::vector<double>* vectors = nullptr);

// CLS-token embedding used as the toy stand-in for an Inception feature.
std::vector<double> cls_embedding(const ToyFeaturizer& featurizer, const Image& img);

struct SimilarityRow {
  long step = 0;
  double mean_same_id = 0.0;
  double mean_cross_id = 0.0;
};

// Mean cosine similarity of condition vectors across views: same-identity
// pairs range over all view pairs per identity, cross-identity pairs over all
// identity pairs per view. cond_of binds the model and frozen stages.
SimilarityRow similarity_stats(
    long step,
    const std::function<std::vector<double>(int identity, int view)>& cond_of,
    int identities, int views);

void write_similarity_csv(const std::string& path,
                          const std::vector<SimilarityRow>& rows);

}  // namespace xmdpt
