#include "defa/space.hpp"

#include <algorithm>
#include <numeric>
#include <set>

namespace defa {

namespace {

void check_vocab(const std::vector<std::string>& names, const char* what) {
  if (names.empty()) {
    throw SpaceError(std::string("empty ") + what + " vocabulary");
  }
  std::set<std::string> unique(names.begin(), names.end());
  if (unique.size() != names.size()) {
    throw SpaceError(std::string("duplicate name in ") + what + " vocabulary");
  }
  for (const auto& n : names) {
    if (n.empty()) {
      throw SpaceError(std::string("empty name in ") + what + " vocabulary");
    }
  }
}

}  // namespace

CompositionSpace::CompositionSpace(std::vector<std::string> attributes,
                                   std::vector<std::string> objects, std::vector<Pair> seen,
                                   std::vector<Pair> unseen)
    : attributes_(std::move(attributes)),
      objects_(std::move(objects)),
      seen_(std::move(seen)),
      unseen_(std::move(unseen)) {
  check_vocab(attributes_, "attribute");
  check_vocab(objects_, "object");
  seen_mask_.assign(static_cast<std::size_t>(num_comps()), 0);
  unseen_mask_.assign(static_cast<std::size_t>(num_comps()), 0);

  auto mark = [&](std::vector<Pair>& pairs, std::vector<char>& mask) {
    std::sort(pairs.begin(), pairs.end());
    pairs.erase(std::unique(pairs.begin(), pairs.end()), pairs.end());
    for (const Pair& p : pairs) {
      mask[static_cast<std::size_t>(comp_index(p))] = 1;
    }
  };
  mark(seen_, seen_mask_);
  mark(unseen_, unseen_mask_);
  for (const Pair& p : unseen_) {
    if (seen_mask_[static_cast<std::size_t>(comp_index(p))]) {
      throw SpaceError("composition '" + comp_name(comp_index(p)) +
                       "' is both seen and unseen");
    }
  }
}

int CompositionSpace::comp_index(Pair p) const {
  if (p.attr < 0 || p.attr >= num_attrs() || p.obj < 0 || p.obj >= num_objs()) {
    throw SpaceError("pair (" + std::to_string(p.attr) + ", " + std::to_string(p.obj) +
                     ") outside vocabulary bounds");
  }
  return p.attr * num_objs() + p.obj;
}

Pair CompositionSpace::pair_of(int comp) const {
  if (comp < 0 || comp >= num_comps()) {
    throw SpaceError("composition index " + std::to_string(comp) + " out of range");
  }
  return Pair{comp / num_objs(), comp % num_objs()};
}

std::vector<Pair> CompositionSpace::test_closed() const {
  std::vector<Pair> all = seen_;
  all.insert(all.end(), unseen_.begin(), unseen_.end());
  std::sort(all.begin(), all.end());
  return all;
}

std::optional<int> CompositionSpace::attr_index(const std::string& name) const {
  auto it = std::find(attributes_.begin(), attributes_.end(), name);
  if (it == attributes_.end()) return std::nullopt;
  return static_cast<int>(it - attributes_.begin());
}

std::optional<int> CompositionSpace::obj_index(const std::string& name) const {
  auto it = std::find(objects_.begin(), objects_.end(), name);
  if (it == objects_.end()) return std::nullopt;
  return static_cast<int>(it - objects_.begin());
}

std::string CompositionSpace::comp_name(int comp) const {
  const Pair p = pair_of(comp);
  return attributes_[static_cast<std::size_t>(p.attr)] + " " +
         objects_[static_cast<std::size_t>(p.obj)];
}

std::int64_t FrequencyTable::total() const {
  return std::accumulate(comp_counts.begin(), comp_counts.end(), std::int64_t{0});
}

FrequencyTable count_frequencies(const std::vector<Sample>& samples,
                                 const CompositionSpace& space) {
  FrequencyTable t;
  t.attr_counts.assign(static_cast<std::size_t>(space.num_attrs()), 0);
  t.obj_counts.assign(static_cast<std::size_t>(space.num_objs()), 0);
  t.comp_counts.assign(static_cast<std::size_t>(space.num_comps()), 0);
  for (const Sample& s : samples) {
    const Pair p = s.pair();
    if (!space.is_seen(p)) {
      throw SpaceError("training sample '" + s.image_id + "' labelled with non-seen pair '" +
                       space.comp_name(space.comp_index(p)) + "'");
    }
    ++t.attr_counts[static_cast<std::size_t>(p.attr)];
    ++t.obj_counts[static_cast<std::size_t>(p.obj)];
    ++t.comp_counts[static_cast<std::size_t>(space.comp_index(p))];
  }
  return t;
}

}  // namespace defa
