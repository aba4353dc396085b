#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "defa/numerics.hpp"

namespace defa {

/// (attribute index, object index).
struct Pair {
  int attr = 0;
  int obj = 0;
  friend bool operator==(const Pair&, const Pair&) = default;
  friend auto operator<=>(const Pair&, const Pair&) = default;
};

/// Vocabularies plus the seen / unseen composition sets of one split.
/// Compositions are enumerated row-major: index(a, o) = a * N_o + o.
class CompositionSpace {
 public:
  CompositionSpace() = default;
  /// Validates and sorts the pair sets; throws SpaceError on overlap, bounds
  /// violations or empty vocabularies.
  CompositionSpace(std::vector<std::string> attributes, std::vector<std::string> objects,
                   std::vector<Pair> seen, std::vector<Pair> unseen);

  int num_attrs() const { return static_cast<int>(attributes_.size()); }
  int num_objs() const { return static_cast<int>(objects_.size()); }
  int num_comps() const { return num_attrs() * num_objs(); }

  int comp_index(Pair p) const;
  int comp_index(int attr, int obj) const { return comp_index(Pair{attr, obj}); }
  Pair pair_of(int comp) const;

  const std::vector<std::string>& attributes() const { return attributes_; }
  const std::vector<std::string>& objects() const { return objects_; }
  const std::vector<Pair>& seen() const { return seen_; }
  const std::vector<Pair>& unseen() const { return unseen_; }
  /// seen ∪ unseen, sorted by composition index.
  std::vector<Pair> test_closed() const;

  bool is_seen(Pair p) const { return seen_mask_.at(comp_index(p)) != 0; }
  bool is_unseen(Pair p) const { return unseen_mask_.at(comp_index(p)) != 0; }

  std::optional<int> attr_index(const std::string& name) const;
  std::optional<int> obj_index(const std::string& name) const;
  std::string comp_name(int comp) const;

 private:
  std::vector<std::string> attributes_;
  std::vector<std::string> objects_;
  std::vector<Pair> seen_;
  std::vector<Pair> unseen_;
  std::vector<char> seen_mask_;
  std::vector<char> unseen_mask_;
};

struct Sample {
  std::string image_id;
  Vector feature;
  int attr = 0;
  int obj = 0;
  Pair pair() const { return Pair{attr, obj}; }
};

/// Training occurrence counts per attribute, object and composition.
struct FrequencyTable {
  std::vector<std::int64_t> attr_counts;
  std::vector<std::int64_t> obj_counts;
  /// Indexed by composition index over the full A x O grid.
  std::vector<std::int64_t> comp_counts;
  std::int64_t total() const;
};

/// Throws SpaceError if any sample is labelled with a pair outside `space.seen()`.
FrequencyTable count_frequencies(const std::vector<Sample>& samples,
                                 const CompositionSpace& space);

}  // namespace defa
