#pragma once

#include <filesystem>
#include <string>

#include "defa/data_io.hpp"
#include "defa/pipeline.hpp"

namespace defa::testing {

inline Dataset tiny_dataset(std::uint64_t seed, int na = 4, int no = 4, int d = 8,
                            int per_pair = 20) {
  SyntheticSpec spec;
  spec.num_attrs = na;
  spec.num_objs = no;
  spec.d_backbone = d;
  spec.samples_per_pair = per_pair;
  spec.eval_samples_per_pair = 4;
  spec.seed = seed;
  const SyntheticData data = generate_synthetic(spec);
  return assemble_dataset(data.manifest, data.embeddings);
}

inline RunConfig tiny_config(std::uint64_t seed = 0) {
  RunConfig c = preset("ut-zappos");
  c.model.d = 8;
  c.model.d_backbone = 8;
  // A single affine map cannot send a nonzero input to the zero vector.
  c.model.projector_layers = 1;
  c.train.seed = seed;
  c.train.epochs = 3;
  c.train.batch_size = 16;
  return c;
}

inline Matrix stack(const std::vector<Sample>& samples) {
  Matrix m(static_cast<Eigen::Index>(samples.size()), samples.front().feature.size());
  for (std::size_t i = 0; i < samples.size(); ++i) {
    m.row(static_cast<Eigen::Index>(i)) = samples[i].feature.transpose();
  }
  return m;
}

inline std::string scratch_dir(const std::string& name) {
  const auto dir = std::filesystem::path(DEFA_TEST_TMP) / name;
  std::filesystem::create_directories(dir);
  return dir.string();
}

}  // namespace defa::testing
