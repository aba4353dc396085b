#pragma once

#include <array>
#include <span>
#include <string>
#include <vector>

#include "defa/numerics.hpp"
#include "defa/space.hpp"

namespace defa {

/// Which prompt context a text row is built with. The DeFA prompt path has
/// its own context; all paths share the primitive tokens and the combiner.
enum class PromptKind { kAttribute = 0, kObject = 1, kComposition = 2, kPseudo = 3 };

/// Three independent MLPs mapping a backbone embedding to the attribute,
/// object and composition visual features.
class VisualProjectors {
 public:
  VisualProjectors(MlpSpec spec);

  void init(ParamStore& store, Rng& rng) const;

  struct Outputs {
    Var attr;
    Var obj;
    Var comp;
  };
  Outputs forward(Graph& g, ParamStore& store, Var x) const;

  const MlpSpec& spec() const { return attr_.spec(); }
  const Mlp& attr() const { return attr_; }
  const Mlp& obj() const { return obj_; }
  const Mlp& comp() const { return comp_; }

 private:
  Mlp attr_;
  Mlp obj_;
  Mlp comp_;
};

/// Learnable primitive tokens, fixed per-prompt context vectors and one shared
/// affine combiner. A text row is normalize(combiner(context + tokens)).
class TokenTable {
 public:
  static constexpr const char* kAttrTokens = "tokens.attr";
  static constexpr const char* kObjTokens = "tokens.obj";
  static constexpr const char* kCombinerW = "combiner.W";
  static constexpr const char* kCombinerB = "combiner.b";
  static constexpr const char* kContexts = "contexts";

  TokenTable(int num_attrs, int num_objs, int dim);

  /// Tokens and contexts ~ Uniform(+-1/sqrt(d)); combiner uses fan-in init.
  void init(ParamStore& store, Rng& rng) const;

  int num_attrs() const { return num_attrs_; }
  int num_objs() const { return num_objs_; }
  int dim() const { return dim_; }
  /// (N_a + N_o) * d.
  std::size_t num_token_params() const;

  /// T^attr (N_a rows), T^obj (N_o rows) or T^comp over the full A x O grid
  /// in canonical order. kPseudo is accepted and behaves like kComposition
  /// with the pseudo-prompt context.
  Var text_features(Graph& g, ParamStore& store, PromptKind kind) const;

  /// Composition rows for the given pairs (duplicates allowed).
  Var prompt_features_for(Graph& g, ParamStore& store, std::span<const Pair> pairs,
                          PromptKind kind = PromptKind::kComposition) const;

 private:
  Var finish(Graph& g, ParamStore& store, Var summed, PromptKind kind) const;

  int num_attrs_;
  int num_objs_;
  int dim_;
};

/// Tape-free helpers returning plain matrices (evaluation, bindings, tests).
std::array<Matrix, 3> project_visual(const VisualProjectors& proj, ParamStore& store,
                                     const Matrix& features);
Matrix text_features(const TokenTable& table, ParamStore& store, PromptKind kind);
Matrix prompt_features_for(const TokenTable& table, ParamStore& store,
                           std::span<const Pair> pairs,
                           PromptKind kind = PromptKind::kComposition);

}  // namespace defa
