#pragma once

#include <array>
#include <string>
#include <vector>

#include "cxr/augment.hpp"
#include "cxr/random.hpp"

namespace cxr {

enum class LungVolume { low, normal, hyperexpanded };
enum class Side { none, left, right };

struct FindingSet {
  LungVolume lung_volume = LungVolume::normal;
  Side effusion = Side::none;
  Side pneumothorax = Side::none;
  int calcifications = 0;  // 0, 1 or 2
  bool heart_enlarged = false;
  bool bone_abnormality = false;

  bool has_effusion() const { return effusion != Side::none; }
  bool has_pneumothorax() const { return pneumothorax != Side::none; }
  void validate() const;
  bool operator==(const FindingSet&) const = default;
};

// Every distinct finding combination, in a fixed order.
std::vector<FindingSet> enumerate_findings();

struct Sample {
  GrayImage image;
  LungMask mask;
  FindingSet findings;
};

inline constexpr std::size_t kImageSize = 64;

FindingSet sample_findings(Rng& rng);
// Draws the same amount of randomness for every finding set, so two renders
// from equal generator states differ only where the findings differ.
Sample render_sample(const FindingSet& findings, Rng& rng);
Sample generate_sample(Rng& rng);

struct RenderedReport {
  std::string text;
  std::vector<std::string> tags;  // in all_tags() order
};

const std::vector<std::string>& all_tags();
RenderedReport render_report(const FindingSet& findings);

enum class Split { train, val, test };
std::string to_string(Split split);
Split parse_split(const std::string& name);

// Seeded shuffle, then largest-remainder partition. Entry i is the split of
// item i.
std::vector<Split> split_dataset(std::size_t count, const std::array<double, 3>& ratios, std::uint64_t seed);

struct Record {
  std::string id;
  std::string image_path;  // relative to the dataset root
  std::string mask_path;
  Split split = Split::train;
  std::vector<std::string> tags;
  std::string report;

  bool operator==(const Record&) const = default;
};

struct DatasetManifest {
  std::vector<Record> records;

  std::string serialize() const;
  static DatasetManifest parse(const std::string& text);
  bool operator==(const DatasetManifest&) const = default;
};

struct Dataset {
  DatasetManifest manifest;
  std::vector<GrayImage> images;
  std::vector<LungMask> masks;

  std::vector<std::size_t> indices(Split split) const;
};

struct SynthConfig {
  std::size_t count = 2000;
  std::uint64_t seed = 0;
  std::array<double, 3> ratios{0.7, 0.1, 0.2};
};

Dataset generate_dataset(const SynthConfig& config);

std::string encode_pgm(const GrayImage& img);
GrayImage decode_pgm(const std::string& bytes);
LungMask mask_from_image(const GrayImage& img);
GrayImage mask_to_image(const LungMask& mask);

// root/images/<id>.pgm, root/masks/<id>.pgm, root/manifest.tsv
void write_dataset(const Dataset& dataset, const std::string& root);
DatasetManifest read_manifest(const std::string& root);
Dataset read_dataset(const std::string& root);

}  // namespace cxr
