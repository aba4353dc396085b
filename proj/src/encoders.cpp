#include "defa/encoders.hpp"

#include <cmath>

namespace defa {

VisualProjectors::VisualProjectors(MlpSpec spec)
    : attr_(spec, "proj.attr"), obj_(spec, "proj.obj"), comp_(spec, "proj.comp") {}

void VisualProjectors::init(ParamStore& store, Rng& rng) const {
  attr_.init(store, rng);
  obj_.init(store, rng);
  comp_.init(store, rng);
}

VisualProjectors::Outputs VisualProjectors::forward(Graph& g, ParamStore& store, Var x) const {
  return Outputs{attr_.forward(g, store, x), obj_.forward(g, store, x),
                 comp_.forward(g, store, x)};
}

TokenTable::TokenTable(int num_attrs, int num_objs, int dim)
    : num_attrs_(num_attrs), num_objs_(num_objs), dim_(dim) {
  if (num_attrs <= 0 || num_objs <= 0 || dim <= 0) {
    throw ConfigError("TokenTable: sizes must be positive");
  }
}

std::size_t TokenTable::num_token_params() const {
  return static_cast<std::size_t>(num_attrs_ + num_objs_) * static_cast<std::size_t>(dim_);
}

void TokenTable::init(ParamStore& store, Rng& rng) const {
  const double bound = 1.0 / std::sqrt(static_cast<double>(dim_));
  store.add(kAttrTokens, rng.uniform_matrix(num_attrs_, dim_, bound));
  store.add(kObjTokens, rng.uniform_matrix(num_objs_, dim_, bound));
  store.add(kCombinerW, rng.uniform_matrix(dim_, dim_, bound));
  store.add(kCombinerB, Matrix::Zero(1, dim_));
  store.add(kContexts, rng.uniform_matrix(4, dim_, bound), /*trainable=*/false);
}

Var TokenTable::finish(Graph& g, ParamStore& store, Var summed, PromptKind kind) const {
  const RowVector context = store.value(kContexts).row(static_cast<int>(kind));
  Var x = g.add_row(summed, context);
  x = g.affine(x, g.param(store, kCombinerW), g.param(store, kCombinerB));
  return g.normalize_rows(x);
}

Var TokenTable::text_features(Graph& g, ParamStore& store, PromptKind kind) const {
  switch (kind) {
    case PromptKind::kAttribute:
      return finish(g, store, g.param(store, kAttrTokens), kind);
    case PromptKind::kObject:
      return finish(g, store, g.param(store, kObjTokens), kind);
    case PromptKind::kComposition:
    case PromptKind::kPseudo: {
      std::vector<Pair> all;
      all.reserve(static_cast<std::size_t>(num_attrs_ * num_objs_));
      for (int a = 0; a < num_attrs_; ++a) {
        for (int o = 0; o < num_objs_; ++o) {
          all.push_back(Pair{a, o});
        }
      }
      return prompt_features_for(g, store, all, kind);
    }
  }
  throw Error("text_features: unknown prompt kind");
}

Var TokenTable::prompt_features_for(Graph& g, ParamStore& store, std::span<const Pair> pairs,
                                    PromptKind kind) const {
  if (pairs.empty()) {
    throw DimensionError("prompt_features_for: no pairs");
  }
  std::vector<int> attrs;
  std::vector<int> objs;
  attrs.reserve(pairs.size());
  objs.reserve(pairs.size());
  for (const Pair& p : pairs) {
    if (p.attr < 0 || p.attr >= num_attrs_ || p.obj < 0 || p.obj >= num_objs_) {
      throw SpaceError("prompt_features_for: pair outside vocabulary");
    }
    attrs.push_back(p.attr);
    objs.push_back(p.obj);
  }
  Var a = g.gather_rows(g.param(store, kAttrTokens), std::move(attrs));
  Var o = g.gather_rows(g.param(store, kObjTokens), std::move(objs));
  return finish(g, store, g.add(a, o), kind);
}

std::array<Matrix, 3> project_visual(const VisualProjectors& proj, ParamStore& store,
                                     const Matrix& features) {
  Graph g;
  auto out = proj.forward(g, store, g.constant(features));
  return {g.value(out.attr), g.value(out.obj), g.value(out.comp)};
}

Matrix text_features(const TokenTable& table, ParamStore& store, PromptKind kind) {
  Graph g;
  return g.value(table.text_features(g, store, kind));
}

Matrix prompt_features_for(const TokenTable& table, ParamStore& store,
                           std::span<const Pair> pairs, PromptKind kind) {
  Graph g;
  return g.value(table.prompt_features_for(g, store, pairs, kind));
}

}  // namespace defa
