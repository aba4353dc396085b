#pragma once

// On-disk formats (embeddings, split manifests, feasibility scores) and the
// synthetic compositional dataset generator.

#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

#include "defa/evaluation.hpp"
#include "defa/numerics.hpp"
#include "defa/space.hpp"

namespace defa {

// --------------------------------------------------------------------------
// Embedding file
//
//   "DEFA" | u32 version = 1 | u32 count | u32 dim
//   count * dim float32, row-major
//   count newline-terminated UTF-8 ids
//
// All integers and floats little-endian.
// --------------------------------------------------------------------------

struct EmbeddingFile {
  int dim = 0;
  /// [count, dim]; values are exactly representable as float32 after a read.
  Matrix data;
  std::vector<std::string> ids;

  std::size_t count() const { return ids.size(); }
};

std::string encode_embeddings(const EmbeddingFile& file);
/// Throws FormatError on any structural problem: bad magic or version,
/// truncation, trailing bytes, non-finite values, empty / duplicate /
/// non-UTF-8 ids.
EmbeddingFile decode_embeddings(std::string_view bytes);
void write_embeddings(const std::string& path, const EmbeddingFile& file);
EmbeddingFile read_embeddings(const std::string& path);

// --------------------------------------------------------------------------
// Manifest (UTF-8, tab-separated, '#' comments)
//
//   attrs:<TAB>name<TAB>name...
//   objs:<TAB>name<TAB>name...
//   pair<TAB>split<TAB>seen|unseen<TAB>attr<TAB>obj
//   image_id<TAB>attr<TAB>obj<TAB>split
//
// split is train, val or test. Seen pairs a split does not declare are taken
// from its samples (train) or from its samples that are train-seen (val,
// test); undeclared unseen pairs are its remaining sample pairs.
// --------------------------------------------------------------------------

struct Manifest {
  struct PairLine {
    std::string split;
    bool seen = true;
    std::string attr;
    std::string obj;
  };
  struct SampleLine {
    std::string image_id;
    std::string attr;
    std::string obj;
    std::string split;
  };
  std::vector<std::string> attrs;
  std::vector<std::string> objs;
  std::vector<PairLine> pairs;
  std::vector<SampleLine> samples;
};

Manifest parse_manifest(const std::string& text);
std::string format_manifest(const Manifest& manifest);
Manifest read_manifest(const std::string& path);
void write_manifest(const std::string& path, const Manifest& manifest);

/// Composition space of one split ("train", "val" or "test").
CompositionSpace build_space(const Manifest& manifest, const std::string& split);

struct Dataset {
  CompositionSpace train_space;
  CompositionSpace val_space;
  CompositionSpace test_space;
  std::vector<Sample> train;
  std::vector<Sample> val;
  std::vector<Sample> test;
  int dim = 0;
};

/// Resolves every sample id against the embedding file.
Dataset assemble_dataset(const Manifest& manifest, const EmbeddingFile& embeddings);
Dataset load_dataset(const std::string& manifest_path, const std::string& embeddings_path);

// --------------------------------------------------------------------------
// Feasibility scores: "attr<TAB>obj<TAB>score" lines covering A x O.
// --------------------------------------------------------------------------

FeasibilityMask parse_feasibility(const std::string& text, const CompositionSpace& space,
                                  double threshold);
FeasibilityMask read_feasibility(const std::string& path, const CompositionSpace& space,
                                 double threshold);
/// One line per composition of `space`, in composition order.
std::string format_feasibility(const CompositionSpace& space, const std::vector<double>& scores);

// --------------------------------------------------------------------------
// Synthetic data
// --------------------------------------------------------------------------

struct SyntheticSpec {
  int num_attrs = 8;
  int num_objs = 10;
  /// Must be even: prototypes live in R^(d_backbone / 2).
  int d_backbone = 32;
  double seen_fraction = 0.6;
  int samples_per_pair = 40;
  /// 0 gives uniform counts; otherwise count_k ~ k^-tail_exponent by rank.
  double tail_exponent = 0.0;
  /// Total training samples for the power-law case (0: samples_per_pair * |seen|).
  int total_samples = 0;
  int eval_samples_per_pair = 10;
  double sigma = 0.15;
  double gamma = 0.3;
  std::uint64_t seed = 0;

  void validate() const;
};

/// Generating parameters, kept for oracles.
struct SyntheticTruth {
  Matrix attr_protos;  // [N_a, k]
  Matrix obj_protos;   // [N_o, k]
  Matrix mixing;       // W, [d, 2k]
  Matrix interaction;  // M, [d, k]
  std::vector<Pair> seen;
  std::vector<Pair> val_unseen;
  std::vector<Pair> test_unseen;
};

struct SyntheticData {
  EmbeddingFile embeddings;
  Manifest manifest;
  SyntheticTruth truth;
};

/// v = W (p_a ⊕ q_o) + gamma * M (sqrt(k) p_a ⊙ q_o) + sigma * N(0, I).
/// Every train-seen pair also gets eval samples in val and test; the pairs
/// left over are split evenly into val-unseen and test-unseen.
SyntheticData generate_synthetic(const SyntheticSpec& spec);

/// Similarity-based plausibility of every composition over A x O: the mean of
/// the best object-prototype cosine among seen pairs sharing the attribute and
/// the best attribute-prototype cosine among seen pairs sharing the object.
std::vector<double> synthetic_feasibility(const SyntheticTruth& truth);

/// Noise-free feature of one composition.
Vector synthetic_feature(const SyntheticTruth& truth, double gamma, Pair p);

}  // namespace defa
