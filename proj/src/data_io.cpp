#include "defa/data_io.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <map>
#include <set>
#include <sstream>
#include <unordered_map>
#include <unordered_set>

#include "binary.hpp"

namespace defa {

const char* to_string(FormatError::Kind kind) {
  switch (kind) {
    case FormatError::Kind::kIo: return "io";
    case FormatError::Kind::kBadMagic: return "bad-magic";
    case FormatError::Kind::kBadVersion: return "bad-version";
    case FormatError::Kind::kTruncated: return "truncated";
    case FormatError::Kind::kTrailingBytes: return "trailing-bytes";
    case FormatError::Kind::kSizeMismatch: return "size-mismatch";
    case FormatError::Kind::kNonFinite: return "non-finite";
    case FormatError::Kind::kBadId: return "bad-id";
    case FormatError::Kind::kDuplicateId: return "duplicate-id";
    case FormatError::Kind::kSyntax: return "syntax";
    case FormatError::Kind::kUnknownName: return "unknown-name";
    case FormatError::Kind::kMissingEntry: return "missing-entry";
  }
  return "unknown";
}

namespace {

constexpr std::uint32_t kEmbeddingVersion = 1;

bool valid_utf8(std::string_view s) {
  std::size_t i = 0;
  while (i < s.size()) {
    const auto c = static_cast<unsigned char>(s[i]);
    int extra = 0;
    std::uint32_t cp = 0;
    if (c < 0x80) {
      ++i;
      continue;
    } else if ((c & 0xE0) == 0xC0) {
      extra = 1;
      cp = c & 0x1F;
    } else if ((c & 0xF0) == 0xE0) {
      extra = 2;
      cp = c & 0x0F;
    } else if ((c & 0xF8) == 0xF0) {
      extra = 3;
      cp = c & 0x07;
    } else {
      return false;
    }
    if (i + static_cast<std::size_t>(extra) >= s.size()) return false;
    for (int k = 1; k <= extra; ++k) {
      const auto cc = static_cast<unsigned char>(s[i + static_cast<std::size_t>(k)]);
      if ((cc & 0xC0) != 0x80) return false;
      cp = (cp << 6) | (cc & 0x3F);
    }
    // Overlong forms, surrogates and out-of-range code points.
    static constexpr std::uint32_t kMin[] = {0, 0x80, 0x800, 0x10000};
    if (cp < kMin[extra] || cp > 0x10FFFF || (cp >= 0xD800 && cp <= 0xDFFF)) return false;
    i += static_cast<std::size_t>(extra) + 1;
  }
  return true;
}

std::vector<std::string> split_tabs(const std::string& line) {
  std::vector<std::string> out;
  std::size_t start = 0;
  while (true) {
    const auto tab = line.find('\t', start);
    out.push_back(line.substr(start, tab == std::string::npos ? std::string::npos : tab - start));
    if (tab == std::string::npos) break;
    start = tab + 1;
  }
  return out;
}

[[noreturn]] void syntax(int lineno, const std::string& msg) {
  throw FormatError(FormatError::Kind::kSyntax, "line " + std::to_string(lineno) + ": " + msg);
}

bool is_split(const std::string& s) { return s == "train" || s == "val" || s == "test"; }

}  // namespace

// --------------------------------------------------------------------------
// Embeddings
// --------------------------------------------------------------------------

std::string encode_embeddings(const EmbeddingFile& file) {
  if (file.dim < 0) {
    throw FormatError(FormatError::Kind::kSizeMismatch, "negative embedding dimension");
  }
  const auto count = static_cast<Eigen::Index>(file.ids.size());
  if (file.data.rows() != count || (count > 0 && file.data.cols() != file.dim)) {
    throw FormatError(FormatError::Kind::kSizeMismatch,
                      "embedding matrix shape does not match ids and dim");
  }
  std::unordered_set<std::string> seen;
  for (const auto& id : file.ids) {
    if (id.empty() || id.find('\n') != std::string::npos || !valid_utf8(id)) {
      throw FormatError(FormatError::Kind::kBadId, "invalid id '" + id + "'");
    }
    if (!seen.insert(id).second) {
      throw FormatError(FormatError::Kind::kDuplicateId, "duplicate id '" + id + "'");
    }
  }
  std::string out = "DEFA";
  bin::put_u32(out, kEmbeddingVersion);
  bin::put_u32(out, static_cast<std::uint32_t>(count));
  bin::put_u32(out, static_cast<std::uint32_t>(file.dim));
  out.reserve(out.size() + 4 * static_cast<std::size_t>(count * file.dim));
  for (Eigen::Index i = 0; i < file.data.size(); ++i) {
    const float f = static_cast<float>(file.data.data()[i]);
    if (!std::isfinite(f)) {
      throw FormatError(FormatError::Kind::kNonFinite, "non-finite embedding value");
    }
    bin::put_f32(out, f);
  }
  for (const auto& id : file.ids) {
    out += id;
    out.push_back('\n');
  }
  return out;
}

EmbeddingFile decode_embeddings(std::string_view bytes) {
  bin::Reader r(bytes);
  if (r.bytes(4, "magic") != "DEFA") {
    throw FormatError(FormatError::Kind::kBadMagic, "embeddings: bad magic");
  }
  if (const auto v = r.u32("version"); v != kEmbeddingVersion) {
    throw FormatError(FormatError::Kind::kBadVersion,
                      "embeddings: unsupported version " + std::to_string(v));
  }
  const std::uint64_t count = r.u32("count");
  const std::uint64_t dim = r.u32("dim");
  if (count > 0 && dim == 0) {
    throw FormatError(FormatError::Kind::kSizeMismatch, "embeddings: zero dimension");
  }
  const std::uint64_t payload = 4 * count * dim;
  // Each id needs at least two bytes (one character and its newline).
  if (payload > r.remaining() || 2 * count > r.remaining() - payload) {
    throw FormatError(FormatError::Kind::kTruncated,
                      "embeddings: header declares " + std::to_string(count) + " x " +
                          std::to_string(dim) + " but the file has " +
                          std::to_string(bytes.size()) + " bytes");
  }
  EmbeddingFile file;
  file.dim = static_cast<int>(dim);
  file.data.resize(static_cast<Eigen::Index>(count), static_cast<Eigen::Index>(dim));
  for (std::uint64_t i = 0; i < count * dim; ++i) {
    const float f = r.f32("payload");
    if (!std::isfinite(f)) {
      throw FormatError(FormatError::Kind::kNonFinite,
                        "embeddings: non-finite value at row " + std::to_string(i / dim));
    }
    file.data.data()[i] = static_cast<double>(f);
  }
  const std::string_view rest = bytes.substr(r.position());
  std::size_t pos = 0;
  std::unordered_set<std::string_view> seen;
  file.ids.reserve(static_cast<std::size_t>(count));
  for (std::uint64_t i = 0; i < count; ++i) {
    const auto nl = rest.find('\n', pos);
    if (nl == std::string_view::npos) {
      throw FormatError(FormatError::Kind::kTruncated,
                        "embeddings: found " + std::to_string(i) + " of " +
                            std::to_string(count) + " ids");
    }
    const std::string_view id = rest.substr(pos, nl - pos);
    if (id.empty() || !valid_utf8(id)) {
      throw FormatError(FormatError::Kind::kBadId,
                        "embeddings: invalid id #" + std::to_string(i));
    }
    if (!seen.insert(id).second) {
      throw FormatError(FormatError::Kind::kDuplicateId,
                        "embeddings: duplicate id '" + std::string(id) + "'");
    }
    file.ids.emplace_back(id);
    pos = nl + 1;
  }
  if (pos != rest.size()) {
    throw FormatError(FormatError::Kind::kTrailingBytes,
                      "embeddings: " + std::to_string(rest.size() - pos) +
                          " bytes after the last id");
  }
  return file;
}

void write_embeddings(const std::string& path, const EmbeddingFile& file) {
  bin::write_file(path, encode_embeddings(file));
}

EmbeddingFile read_embeddings(const std::string& path) {
  return decode_embeddings(bin::read_file(path));
}

// --------------------------------------------------------------------------
// Manifest
// --------------------------------------------------------------------------

Manifest parse_manifest(const std::string& text) {
  Manifest m;
  std::istringstream in(text);
  std::string line;
  int lineno = 0;
  bool have_attrs = false;
  bool have_objs = false;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty() || line[0] == '#') continue;
    if (!valid_utf8(line)) syntax(lineno, "not valid UTF-8");
    auto f = split_tabs(line);
    if (f[0] == "attrs:" || f[0] == "objs:") {
      const bool attrs = f[0] == "attrs:";
      if (attrs ? have_attrs : have_objs) syntax(lineno, "repeated " + f[0] + " line");
      (attrs ? have_attrs : have_objs) = true;
      (attrs ? m.attrs : m.objs).assign(f.begin() + 1, f.end());
      continue;
    }
    if (f[0] == "pair") {
      if (f.size() != 5) syntax(lineno, "pair lines need 5 tab-separated fields");
      if (!is_split(f[1])) syntax(lineno, "unknown split '" + f[1] + "'");
      if (f[2] != "seen" && f[2] != "unseen") syntax(lineno, "expected seen or unseen");
      if (f[1] == "train" && f[2] == "unseen") syntax(lineno, "train has no unseen pairs");
      m.pairs.push_back(Manifest::PairLine{f[1], f[2] == "seen", f[3], f[4]});
      continue;
    }
    if (f.size() != 4) syntax(lineno, "sample lines need 4 tab-separated fields");
    if (f[0].empty()) syntax(lineno, "empty image id");
    if (!is_split(f[3])) syntax(lineno, "unknown split '" + f[3] + "'");
    m.samples.push_back(Manifest::SampleLine{f[0], f[1], f[2], f[3]});
  }
  if (!have_attrs || !have_objs) {
    throw FormatError(FormatError::Kind::kMissingEntry, "manifest lacks attrs: or objs: line");
  }
  return m;
}

std::string format_manifest(const Manifest& m) {
  std::string out = "attrs:";
  for (const auto& a : m.attrs) out += "\t" + a;
  out += "\nobjs:";
  for (const auto& o : m.objs) out += "\t" + o;
  out += "\n";
  for (const auto& p : m.pairs) {
    out += "pair\t" + p.split + "\t" + (p.seen ? "seen" : "unseen") + "\t" + p.attr + "\t" +
           p.obj + "\n";
  }
  for (const auto& s : m.samples) {
    out += s.image_id + "\t" + s.attr + "\t" + s.obj + "\t" + s.split + "\n";
  }
  return out;
}

Manifest read_manifest(const std::string& path) { return parse_manifest(bin::read_file(path)); }

void write_manifest(const std::string& path, const Manifest& manifest) {
  bin::write_file(path, format_manifest(manifest));
}

namespace {

struct Resolver {
  std::unordered_map<std::string, int> attrs;
  std::unordered_map<std::string, int> objs;

  explicit Resolver(const Manifest& m) {
    for (std::size_t i = 0; i < m.attrs.size(); ++i) attrs.emplace(m.attrs[i], static_cast<int>(i));
    for (std::size_t i = 0; i < m.objs.size(); ++i) objs.emplace(m.objs[i], static_cast<int>(i));
  }

  Pair operator()(const std::string& a, const std::string& o) const {
    auto ia = attrs.find(a);
    if (ia == attrs.end()) {
      throw FormatError(FormatError::Kind::kUnknownName, "unknown attribute '" + a + "'");
    }
    auto io = objs.find(o);
    if (io == objs.end()) {
      throw FormatError(FormatError::Kind::kUnknownName, "unknown object '" + o + "'");
    }
    return Pair{ia->second, io->second};
  }
};

std::set<Pair> declared(const Manifest& m, const Resolver& res, const std::string& split,
                        bool seen) {
  std::set<Pair> out;
  for (const auto& p : m.pairs) {
    if (p.split == split && p.seen == seen) out.insert(res(p.attr, p.obj));
  }
  return out;
}

std::set<Pair> sample_pairs(const Manifest& m, const Resolver& res, const std::string& split) {
  std::set<Pair> out;
  for (const auto& s : m.samples) {
    if (s.split == split) out.insert(res(s.attr, s.obj));
  }
  return out;
}

}  // namespace

CompositionSpace build_space(const Manifest& m, const std::string& split) {
  if (!is_split(split)) {
    throw SpaceError("unknown split '" + split + "'");
  }
  const Resolver res(m);
  std::set<Pair> train_seen = declared(m, res, "train", true);
  if (train_seen.empty()) train_seen = sample_pairs(m, res, "train");
  if (split == "train") {
    return CompositionSpace(m.attrs, m.objs, {train_seen.begin(), train_seen.end()}, {});
  }
  const std::set<Pair> from_samples = sample_pairs(m, res, split);
  std::set<Pair> seen = declared(m, res, split, true);
  std::set<Pair> unseen = declared(m, res, split, false);
  if (seen.empty()) {
    for (const Pair& p : from_samples) {
      if (train_seen.count(p)) seen.insert(p);
    }
  }
  if (unseen.empty()) {
    for (const Pair& p : from_samples) {
      if (!train_seen.count(p) && !seen.count(p)) unseen.insert(p);
    }
  }
  for (const Pair& p : unseen) {
    if (train_seen.count(p)) {
      throw SpaceError(split + ": unseen pair " + m.attrs[static_cast<std::size_t>(p.attr)] +
                       " " + m.objs[static_cast<std::size_t>(p.obj)] + " is seen in training");
    }
  }
  return CompositionSpace(m.attrs, m.objs, {seen.begin(), seen.end()},
                          {unseen.begin(), unseen.end()});
}

Dataset assemble_dataset(const Manifest& m, const EmbeddingFile& emb) {
  Dataset d;
  d.train_space = build_space(m, "train");
  d.val_space = build_space(m, "val");
  d.test_space = build_space(m, "test");
  d.dim = emb.dim;
  std::unordered_map<std::string_view, std::size_t> rows;
  rows.reserve(emb.ids.size());
  for (std::size_t i = 0; i < emb.ids.size(); ++i) rows.emplace(emb.ids[i], i);
  const Resolver res(m);
  for (const auto& s : m.samples) {
    auto it = rows.find(s.image_id);
    if (it == rows.end()) {
      throw FormatError(FormatError::Kind::kMissingEntry,
                        "sample '" + s.image_id + "' has no embedding");
    }
    const Pair p = res(s.attr, s.obj);
    Sample sample{s.image_id, emb.data.row(static_cast<Eigen::Index>(it->second)).transpose(),
                  p.attr, p.obj};
    const CompositionSpace& space =
        s.split == "train" ? d.train_space : (s.split == "val" ? d.val_space : d.test_space);
    const bool known = space.is_seen(p) || space.is_unseen(p);
    if (!known) {
      throw SpaceError(s.split + " sample '" + s.image_id + "' is labelled " + s.attr + " " +
                       s.obj + ", which the split does not contain");
    }
    (s.split == "train" ? d.train : (s.split == "val" ? d.val : d.test)).push_back(std::move(sample));
  }
  return d;
}

Dataset load_dataset(const std::string& manifest_path, const std::string& embeddings_path) {
  return assemble_dataset(read_manifest(manifest_path), read_embeddings(embeddings_path));
}

// --------------------------------------------------------------------------
// Feasibility
// --------------------------------------------------------------------------

FeasibilityMask parse_feasibility(const std::string& text, const CompositionSpace& space,
                                  double threshold) {
  const int no = space.num_objs();
  FeasibilityMask mask;
  mask.threshold = threshold;
  mask.scores.assign(static_cast<std::size_t>(space.num_comps()), 0.0);
  std::vector<char> have(mask.scores.size(), 0);
  std::istringstream in(text);
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty() || line[0] == '#') continue;
    const auto f = split_tabs(line);
    if (f.size() != 3) syntax(lineno, "expected attr<TAB>obj<TAB>score");
    const auto a = space.attr_index(f[0]);
    const auto o = space.obj_index(f[1]);
    if (!a || !o) {
      throw FormatError(FormatError::Kind::kUnknownName,
                        "line " + std::to_string(lineno) + ": unknown primitive in '" + f[0] +
                            " " + f[1] + "'");
    }
    double score = 0.0;
    try {
      std::size_t used = 0;
      score = std::stod(f[2], &used);
      if (used != f[2].size()) throw std::invalid_argument(f[2]);
    } catch (const std::exception&) {
      syntax(lineno, "bad score '" + f[2] + "'");
    }
    if (!std::isfinite(score)) {
      throw FormatError(FormatError::Kind::kNonFinite,
                        "line " + std::to_string(lineno) + ": non-finite score");
    }
    const auto c = static_cast<std::size_t>(*a * no + *o);
    if (have[c]) {
      throw FormatError(FormatError::Kind::kDuplicateId,
                        "line " + std::to_string(lineno) + ": repeated pair " + f[0] + " " + f[1]);
    }
    have[c] = 1;
    mask.scores[c] = score;
  }
  for (std::size_t c = 0; c < have.size(); ++c) {
    if (!have[c]) {
      throw FormatError(FormatError::Kind::kMissingEntry,
                        "feasibility scores lack pair " + space.comp_name(static_cast<int>(c)));
    }
  }
  return mask;
}

FeasibilityMask read_feasibility(const std::string& path, const CompositionSpace& space,
                                 double threshold) {
  return parse_feasibility(bin::read_file(path), space, threshold);
}

std::string format_feasibility(const CompositionSpace& space, const std::vector<double>& scores) {
  if (scores.size() != static_cast<std::size_t>(space.num_comps())) {
    throw FormatError(FormatError::Kind::kSizeMismatch, "feasibility scores do not cover A x O");
  }
  std::string out;
  char buf[40];
  for (int c = 0; c < space.num_comps(); ++c) {
    const Pair p = space.pair_of(c);
    std::snprintf(buf, sizeof(buf), "%.17g", scores[static_cast<std::size_t>(c)]);
    out += space.attributes()[static_cast<std::size_t>(p.attr)] + "\t" +
           space.objects()[static_cast<std::size_t>(p.obj)] + "\t" + buf + "\n";
  }
  return out;
}

// --------------------------------------------------------------------------
// Synthetic data
// --------------------------------------------------------------------------

void SyntheticSpec::validate() const {
  if (num_attrs < 1 || num_objs < 1 || num_attrs * num_objs < 4) {
    throw ConfigError("synthetic: need N_a * N_o >= 4");
  }
  if (d_backbone < 2 || d_backbone % 2 != 0) {
    throw ConfigError("synthetic: d_backbone must be a positive even number");
  }
  if (!(seen_fraction > 0.0 && seen_fraction <= 1.0)) {
    throw ConfigError("synthetic: seen fraction must lie in (0, 1]");
  }
  if (std::lround(seen_fraction * num_attrs * num_objs) < 1) {
    throw ConfigError("synthetic: seen fraction rounds to zero pairs");
  }
  if (samples_per_pair < 1 || eval_samples_per_pair < 0 || total_samples < 0) {
    throw ConfigError("synthetic: sample counts must be positive");
  }
  if (!(sigma >= 0.0) || !std::isfinite(sigma) || !std::isfinite(gamma)) {
    throw ConfigError("synthetic: sigma must be >= 0 and gamma finite");
  }
  if (!(tail_exponent >= 0.0) || !std::isfinite(tail_exponent)) {
    throw ConfigError("synthetic: tail exponent must be >= 0");
  }
}

std::vector<double> synthetic_feasibility(const SyntheticTruth& t) {
  const auto na = static_cast<int>(t.attr_protos.rows());
  const auto no = static_cast<int>(t.obj_protos.rows());
  // Prototypes are unit rows, so the Gram matrices hold cosines.
  const Matrix ga = t.attr_protos * t.attr_protos.transpose();
  const Matrix go = t.obj_protos * t.obj_protos.transpose();
  std::vector<double> out(static_cast<std::size_t>(na * no), 0.0);
  for (int a = 0; a < na; ++a) {
    for (int o = 0; o < no; ++o) {
      double by_obj = -1.0, by_attr = -1.0;
      for (const Pair& s : t.seen) {
        if (s.attr == a) by_obj = std::max(by_obj, go(o, s.obj));
        if (s.obj == o) by_attr = std::max(by_attr, ga(a, s.attr));
      }
      out[static_cast<std::size_t>(a * no + o)] = 0.5 * (by_obj + by_attr);
    }
  }
  return out;
}

Vector synthetic_feature(const SyntheticTruth& t, double gamma, Pair p) {
  const Eigen::Index k = t.attr_protos.cols();
  const Vector pa = t.attr_protos.row(p.attr).transpose();
  const Vector qo = t.obj_protos.row(p.obj).transpose();
  Vector cat(2 * k);
  cat << pa, qo;
  const Vector inter = std::sqrt(static_cast<double>(k)) * pa.cwiseProduct(qo);
  return t.mixing * cat + gamma * (t.interaction * inter);
}

SyntheticData generate_synthetic(const SyntheticSpec& spec) {
  spec.validate();
  const int na = spec.num_attrs;
  const int no = spec.num_objs;
  const int d = spec.d_backbone;
  const int k = d / 2;
  Rng rng(spec.seed);

  SyntheticData out;
  SyntheticTruth& t = out.truth;
  auto unit_rows = [&rng](int rows, int cols) {
    Matrix m = rng.normal_matrix(rows, cols, 1.0);
    for (Eigen::Index r = 0; r < m.rows(); ++r) m.row(r).normalize();
    return m;
  };
  t.attr_protos = unit_rows(na, k);
  t.obj_protos = unit_rows(no, k);
  t.mixing = rng.normal_matrix(d, 2 * k, 1.0 / std::sqrt(static_cast<double>(d)));
  t.interaction = rng.normal_matrix(d, k, 1.0 / std::sqrt(static_cast<double>(k)));

  std::vector<Pair> all;
  for (int a = 0; a < na; ++a) {
    for (int o = 0; o < no; ++o) all.push_back(Pair{a, o});
  }
  const auto n_seen = static_cast<std::size_t>(
      std::lround(spec.seen_fraction * static_cast<double>(all.size())));
  const bool can_cover = n_seen >= static_cast<std::size_t>(std::max(na, no));
  for (int attempt = 0; attempt < 1000; ++attempt) {
    rng.shuffle(all);
    if (!can_cover) break;
    std::vector<char> ca(static_cast<std::size_t>(na), 0), co(static_cast<std::size_t>(no), 0);
    for (std::size_t i = 0; i < n_seen; ++i) {
      ca[static_cast<std::size_t>(all[i].attr)] = 1;
      co[static_cast<std::size_t>(all[i].obj)] = 1;
    }
    if (std::count(ca.begin(), ca.end(), 0) == 0 && std::count(co.begin(), co.end(), 0) == 0) {
      break;
    }
  }
  // Seen order doubles as frequency rank for long-tailed counts.
  t.seen.assign(all.begin(), all.begin() + static_cast<std::ptrdiff_t>(n_seen));
  const std::size_t rest = all.size() - n_seen;
  const std::size_t n_val = rest / 2;
  t.val_unseen.assign(all.begin() + static_cast<std::ptrdiff_t>(n_seen),
                      all.begin() + static_cast<std::ptrdiff_t>(n_seen + n_val));
  t.test_unseen.assign(all.begin() + static_cast<std::ptrdiff_t>(n_seen + n_val), all.end());

  std::vector<int> counts(n_seen, spec.samples_per_pair);
  if (spec.tail_exponent > 0.0) {
    const double total = spec.total_samples > 0
                             ? static_cast<double>(spec.total_samples)
                             : static_cast<double>(spec.samples_per_pair) * n_seen;
    double z = 0.0;
    for (std::size_t r = 1; r <= n_seen; ++r) z += std::pow(static_cast<double>(r), -spec.tail_exponent);
    for (std::size_t r = 1; r <= n_seen; ++r) {
      const double c = total * std::pow(static_cast<double>(r), -spec.tail_exponent) / z;
      counts[r - 1] = std::max(1, static_cast<int>(std::lround(c)));
    }
  }

  Manifest& m = out.manifest;
  for (int a = 0; a < na; ++a) m.attrs.push_back("a" + std::to_string(a));
  for (int o = 0; o < no; ++o) m.objs.push_back("o" + std::to_string(o));
  auto declare = [&m](const std::string& split, bool seen, const std::vector<Pair>& pairs) {
    std::vector<Pair> sorted = pairs;
    std::sort(sorted.begin(), sorted.end());
    for (const Pair& p : sorted) {
      m.pairs.push_back(Manifest::PairLine{split, seen, m.attrs[static_cast<std::size_t>(p.attr)],
                                           m.objs[static_cast<std::size_t>(p.obj)]});
    }
  };
  declare("train", true, t.seen);
  declare("val", true, t.seen);
  declare("val", false, t.val_unseen);
  declare("test", true, t.seen);
  declare("test", false, t.test_unseen);

  std::vector<Vector> rows;
  auto emit = [&](const std::string& split, Pair p, int n) {
    const Vector clean = synthetic_feature(t, spec.gamma, p);
    for (int i = 0; i < n; ++i) {
      Vector v = clean;
      if (spec.sigma > 0.0) {
        for (Eigen::Index j = 0; j < v.size(); ++j) v[j] += spec.sigma * rng.normal();
      }
      const std::string id = split + "_" + std::to_string(rows.size());
      m.samples.push_back(Manifest::SampleLine{id, m.attrs[static_cast<std::size_t>(p.attr)],
                                               m.objs[static_cast<std::size_t>(p.obj)], split});
      out.embeddings.ids.push_back(id);
      rows.push_back(std::move(v));
    }
  };
  for (std::size_t i = 0; i < n_seen; ++i) emit("train", t.seen[i], counts[i]);
  for (const char* split : {"val", "test"}) {
    const auto& unseen = std::string(split) == "val" ? t.val_unseen : t.test_unseen;
    for (const Pair& p : t.seen) emit(split, p, spec.eval_samples_per_pair);
    for (const Pair& p : unseen) emit(split, p, spec.eval_samples_per_pair);
  }

  out.embeddings.dim = d;
  out.embeddings.data.resize(static_cast<Eigen::Index>(rows.size()), d);
  for (std::size_t i = 0; i < rows.size(); ++i) {
    // Stored as float32 on disk; round here so in-memory and on-disk agree.
    out.embeddings.data.row(static_cast<Eigen::Index>(i)) =
        rows[i].cast<float>().cast<double>().transpose();
  }
  return out;
}

}  // namespace defa
