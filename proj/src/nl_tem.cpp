#include "fspnet/nl_tem.hpp"

namespace fspnet {

Tensor fuse_query(const Tensor& t1_normed, const Tensor& t2_normed) {
  if (t1_normed.shape() != t2_normed.shape()) {
    throw ShapeError("fuse_query: token shapes differ: " +
                     shape_str(t1_normed.shape()) + " vs " +
                     shape_str(t2_normed.shape()));
  }
  return concat({t1_normed, t2_normed}, 1);
}

Tensor weighted_pool(const Tensor& t_k, const Tensor& t_q, const Tensor& w_q,
                     std::size_t n_vertices, Tensor* weight_map) {
  Tensor wmap = softmax(linear(t_q, w_q), 1);
  if (weight_map) *weight_map = wmap;
  return adaptive_avg_pool_seq(mul(t_k, wmap), n_vertices);
}

Tensor attention_map(const Tensor& t_q_prime, const Tensor& t_k) {
  return softmax(matmul(t_q_prime, transpose(t_k)), 1);
}

Tensor graph_project(const Tensor& t_v, const Tensor& t_a) {
  // Vertex n is the t_a-weighted average of token features.
  return matmul(t_a, t_v);
}

Tensor gcn(const Tensor& t_g, const Tensor& adjacency, const Tensor& w_g) {
  const std::size_t n = t_g.dim(0);
  if (adjacency.rank() != 2 || adjacency.dim(0) != n ||
      adjacency.dim(1) != n) {
    throw ShapeError("gcn: adjacency " + shape_str(adjacency.shape()) +
                     " does not match vertices " + shape_str(t_g.shape()));
  }
  Tensor propagate = sub(Tensor::eye(n), adjacency);
  return relu(matmul(matmul(propagate, t_g), w_g));
}

Tensor reproject_and_deserialize(const Tensor& t_g_hat, const Tensor& t_a,
                                 const TokenSequence& t_original,
                                 const Tensor& restore) {
  Tensor back = matmul(transpose(t_a), t_g_hat);  // l x c/2
  Tensor lifted = linear(back, restore);          // l x c
  Tensor merged = add(lifted, t_original.tokens);
  return deserialize_tokens(
      TokenSequence{merged, t_original.grid_h, t_original.grid_w});
}

NlTem::NlTem(const std::string& name, std::size_t embed_dim_,
             std::size_t n_vertices_, Rng& rng)
    : embed_dim(embed_dim_),
      n_vertices(n_vertices_),
      ln_gamma(make_param_const(name + ".ln.gamma", {embed_dim_}, 1.0)),
      ln_beta(make_param_const(name + ".ln.beta", {embed_dim_}, 0.0)),
      wv1(make_param_trunc_normal(name + ".wv1", {embed_dim_, embed_dim_ / 2},
                                  0.02, rng)),
      wk1(make_param_trunc_normal(name + ".wk1", {embed_dim_, embed_dim_ / 2},
                                  0.02, rng)),
      wv2(make_param_trunc_normal(name + ".wv2", {embed_dim_, embed_dim_ / 2},
                                  0.02, rng)),
      wk2(make_param_trunc_normal(name + ".wk2", {embed_dim_, embed_dim_ / 2},
                                  0.02, rng)),
      wq(make_param_trunc_normal(name + ".wq",
                                 {2 * embed_dim_, embed_dim_ / 2}, 0.02, rng)),
      adjacency(make_param_const(name + ".adjacency",
                                 {n_vertices_, n_vertices_}, 0.0)),
      gcn_weight(make_param_trunc_normal(
          name + ".gcn_weight", {embed_dim_ / 2, embed_dim_ / 2}, 0.02, rng)),
      restore(make_param_trunc_normal(name + ".restore",
                                      {embed_dim_ / 2, embed_dim_}, 0.02,
                                      rng)) {
  if (embed_dim_ % 2 != 0) {
    throw ShapeError("nl_tem: embed dim " + std::to_string(embed_dim_) +
                     " must be even");
  }
}

std::pair<Tensor, Tensor> NlTem::forward(const TokenSequence& t1,
                                         const TokenSequence& t2,
                                         NlTemIntermediates* inter1,
                                         NlTemIntermediates* inter2) const {
  if (t1.tokens.shape() != t2.tokens.shape()) {
    throw ShapeError("nl_tem: token shapes differ: " +
                     shape_str(t1.tokens.shape()) + " vs " +
                     shape_str(t2.tokens.shape()));
  }
  const std::size_t l = t1.tokens.dim(0);
  if (n_vertices > l) {
    throw ShapeError("nl_tem: " + std::to_string(n_vertices) +
                     " vertices exceed " + std::to_string(l) + " tokens");
  }

  Tensor n1 = layer_norm(t1.tokens, ln_gamma.tensor, ln_beta.tensor);
  Tensor n2 = layer_norm(t2.tokens, ln_gamma.tensor, ln_beta.tensor);
  Tensor t_q = fuse_query(n1, n2);

  auto branch = [&](const Tensor& normed, const TokenSequence& original,
                    const Parameter& wv, const Parameter& wk,
                    NlTemIntermediates* inter) {
    NlTemIntermediates im;
    im.t_v = linear(normed, wv.tensor);
    im.t_k = linear(normed, wk.tensor);
    im.t_q = t_q;
    im.t_q_prime =
        weighted_pool(im.t_k, t_q, wq.tensor, n_vertices, &im.t_q_w);
    im.t_a = attention_map(im.t_q_prime, im.t_k);
    im.t_g = graph_project(im.t_v, im.t_a);
    im.t_g_hat = gcn(im.t_g, adjacency.tensor, gcn_weight.tensor);
    Tensor out =
        reproject_and_deserialize(im.t_g_hat, im.t_a, original, restore.tensor);
    if (inter) *inter = std::move(im);
    return out;
  };

  Tensor o1 = branch(n1, t1, wv1, wk1, inter1);
  Tensor o2 = branch(n2, t2, wv2, wk2, inter2);
  return {o1, o2};
}

void NlTem::collect(std::vector<Parameter*>& out) {
  for (Parameter* p : {&ln_gamma, &ln_beta, &wv1, &wk1, &wv2, &wk2, &wq,
                       &adjacency, &gcn_weight, &restore})
    out.push_back(p);
}

}  // namespace fspnet
