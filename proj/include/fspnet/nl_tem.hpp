#pragma once

#include <utility>
#include <vector>

#include "fspnet/encoder.hpp"
#include "fspnet/nn.hpp"
#include "fspnet/tensor.hpp"

namespace fspnet {

/// Intermediate products of one NL-TEM branch, exposed for tests.
struct NlTemIntermediates {
  Tensor t_v, t_k;    // l x c/2
  Tensor t_q;         // l x 2c fused query
  Tensor t_q_w;       // l x c/2 softmax weight map
  Tensor t_q_prime;   // n_vertices x c/2 pooled query
  Tensor t_a;         // n_vertices x l attention map (row-stochastic)
  Tensor t_g;         // n_vertices x c/2 vertex features
  Tensor t_g_hat;     // GCN output, same shape as t_g
};

// Stand-alone pieces of the module, in the order they compose.
Tensor fuse_query(const Tensor& t1_normed, const Tensor& t2_normed);
Tensor weighted_pool(const Tensor& t_k, const Tensor& t_q, const Tensor& w_q,
                     std::size_t n_vertices, Tensor* weight_map = nullptr);
Tensor attention_map(const Tensor& t_q_prime, const Tensor& t_k);
Tensor graph_project(const Tensor& t_v, const Tensor& t_a);
Tensor gcn(const Tensor& t_g, const Tensor& adjacency, const Tensor& w_g);
Tensor reproject_and_deserialize(const Tensor& t_g_hat, const Tensor& t_a,
                                 const TokenSequence& t_original,
                                 const Tensor& restore);

/// Non-local token enhancement over a pair of adjacent encoder outputs.
/// Each branch has its own value/key projections; the fused query, graph
/// and restore weights are shared.
struct NlTem {
  std::size_t embed_dim = 0;
  std::size_t n_vertices = 16;

  Parameter ln_gamma, ln_beta;      // shared input normalization
  Parameter wv1, wk1, wv2, wk2;     // c x c/2, per branch
  Parameter wq;                     // 2c x c/2
  Parameter adjacency;              // n_vertices x n_vertices, zero-init
  Parameter gcn_weight;             // c/2 x c/2
  Parameter restore;                // c/2 x c

  NlTem() = default;
  NlTem(const std::string& name, std::size_t embed_dim, std::size_t n_vertices,
        Rng& rng);

  /// Enhanced 2-d features (c x grid_h x grid_w) for each input.
  std::pair<Tensor, Tensor> forward(const TokenSequence& t1,
                                    const TokenSequence& t2,
                                    NlTemIntermediates* inter1 = nullptr,
                                    NlTemIntermediates* inter2 = nullptr) const;

  void collect(std::vector<Parameter*>& out);
};

}  // namespace fspnet
