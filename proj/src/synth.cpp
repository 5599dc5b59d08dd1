#include "cxr/synth.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <sstream>

#include "cxr/config.hpp"
#include "cxr/error.hpp"

namespace cxr {

namespace fs = std::filesystem;

void FindingSet::validate() const {
  if (calcifications < 0 || calcifications > 2) throw ConfigError("findings: calcification count must be 0, 1 or 2");
}

std::vector<FindingSet> enumerate_findings() {
  std::vector<FindingSet> out;
  for (auto vol : {LungVolume::low, LungVolume::normal, LungVolume::hyperexpanded})
    for (auto eff : {Side::none, Side::left, Side::right})
      for (auto ptx : {Side::none, Side::left, Side::right})
        for (int calc = 0; calc <= 2; ++calc)
          for (bool heart : {false, true})
            for (bool bone : {false, true}) out.push_back({vol, eff, ptx, calc, heart, bone});
  return out;
}

namespace {

Side draw_side(Rng& rng, double p_present) {
  if (!bernoulli(rng, p_present)) return Side::none;
  return bernoulli(rng, 0.5) ? Side::left : Side::right;
}

struct Lung {
  double cx, cy, rx, ry;
  Side side;

  // Squared normalized radius at the center of pixel (r, c).
  double radius2(std::size_t r, std::size_t c) const {
    const double dx = (static_cast<double>(c) + 0.5 - cx) / rx;
    const double dy = (static_cast<double>(r) + 0.5 - cy) / ry;
    return dx * dx + dy * dy;
  }
  bool contains(std::size_t r, std::size_t c) const { return radius2(r, c) <= 1.0; }
};

}  // namespace

FindingSet sample_findings(Rng& rng) {
  FindingSet f;
  const double u = uniform01(rng);
  f.lung_volume = u < 0.2 ? LungVolume::low : (u < 0.8 ? LungVolume::normal : LungVolume::hyperexpanded);
  f.effusion = draw_side(rng, 0.3);
  f.pneumothorax = draw_side(rng, 0.25);
  const double c = uniform01(rng);
  f.calcifications = c < 0.6 ? 0 : (c < 0.8 ? 1 : 2);
  f.heart_enlarged = bernoulli(rng, 0.3);
  f.bone_abnormality = bernoulli(rng, 0.25);
  return f;
}

Sample render_sample(const FindingSet& findings, Rng& rng) {
  findings.validate();
  constexpr std::size_t N = kImageSize;
  const double ry_base =
      findings.lung_volume == LungVolume::low ? 13.0 : (findings.lung_volume == LungVolume::normal ? 17.0 : 21.0);
  const double left_dx = uniform(rng, -1.5, 1.5), right_dx = uniform(rng, -1.5, 1.5);
  const double dy = uniform(rng, -1.5, 1.5);
  const double ry = ry_base + uniform(rng, -1.0, 1.0);
  const double rx = 9.0 + uniform(rng, -0.5, 0.5);
  const double lung_level = uniform(rng, 0.62, 0.68);
  const double heart_dx = uniform(rng, -1.0, 1.0);
  const double clavicle_y = 3.0 + std::floor(uniform(rng, 0.0, 2.0));
  const double fracture_x = uniform(rng, 12.0, 22.0);
  const double effusion_level = uniform(rng, 0.2, 0.35);
  std::array<std::array<double, 3>, 2> calc_draws{};
  for (auto& d : calc_draws) d = {uniform01(rng), uniform01(rng), uniform01(rng)};

  const std::array<Lung, 2> lungs{Lung{17.0 + left_dx, 32.0 + dy, rx, ry, Side::left},
                                  Lung{47.0 + right_dx, 32.0 + dy, rx, ry, Side::right}};
  auto lung_of = [&](Side s) -> const Lung& { return s == Side::left ? lungs[0] : lungs[1]; };

  std::vector<float> px(N * N);
  std::vector<std::uint8_t> mask(N * N, 0);
  for (std::size_t r = 0; r < N; ++r)
    for (std::size_t c = 0; c < N; ++c) {
      const double noise = uniform01(rng);
      const bool inside = lungs[0].contains(r, c) || lungs[1].contains(r, c);
      mask[r * N + c] = inside ? 1 : 0;
      px[r * N + c] = static_cast<float>(inside ? lung_level + 0.08 * (noise - 0.5) : 0.03 + 0.09 * noise);
    }

  // Outside the mask: cardiac silhouette and clavicles.
  const double heart_rx = findings.heart_enlarged ? 7.0 : 4.0;
  const double hcx = 32.0 + heart_dx, hcy = 38.0 + dy, hry = 11.0;
  for (std::size_t r = 0; r < N; ++r)
    for (std::size_t c = 0; c < N; ++c) {
      if (mask[r * N + c]) continue;
      const double ex = (static_cast<double>(c) + 0.5 - hcx) / heart_rx;
      const double ey = (static_cast<double>(r) + 0.5 - hcy) / hry;
      if (ex * ex + ey * ey <= 1.0) px[r * N + c] = 0.3f + 0.5f * (px[r * N + c] - 0.075f);
    }
  for (int side = 0; side < 2; ++side) {
    const double x0 = side == 0 ? 6.0 : 36.0, x1 = side == 0 ? 28.0 : 58.0;
    for (auto c = static_cast<std::size_t>(x0); c < static_cast<std::size_t>(x1); ++c) {
      auto r = static_cast<std::size_t>(clavicle_y);
      if (findings.bone_abnormality && side == 0) {
        const double x = static_cast<double>(c) + 0.5;
        if (std::abs(x - fracture_x) < 1.5) continue;
        if (x > fracture_x) r += 2;
      }
      for (std::size_t rr = r; rr < r + 2; ++rr)
        if (!mask[rr * N + c]) px[rr * N + c] = 0.35f;
    }
  }

  // Inside the mask: pneumothorax rim, basal effusion, calcified foci.
  if (findings.has_pneumothorax()) {
    const Lung& L = lung_of(findings.pneumothorax);
    for (std::size_t r = 0; r < N; ++r)
      for (std::size_t c = 0; c < N; ++c) {
        if (!L.contains(r, c) || L.radius2(r, c) < 0.75 * 0.75) continue;
        const double x = static_cast<double>(c) + 0.5;
        const bool lateral = L.side == Side::left ? x < L.cx : x > L.cx;
        if (lateral) px[r * N + c] = 0.45f + 0.25f * (px[r * N + c] - lung_level);
      }
  }
  if (findings.has_effusion()) {
    const Lung& L = lung_of(findings.effusion);
    for (std::size_t r = 0; r < N; ++r)
      for (std::size_t c = 0; c < N; ++c) {
        if (!L.contains(r, c)) continue;
        const double y_norm = (static_cast<double>(r) + 0.5 - L.cy) / L.ry;
        if (y_norm > 1.0 - 2.0 * effusion_level) px[r * N + c] = 0.9f + 0.5f * (px[r * N + c] - lung_level);
      }
  }
  for (int k = 0; k < findings.calcifications; ++k) {
    const auto& d = calc_draws[k];
    const Lung& L = d[0] < 0.5 ? lungs[0] : lungs[1];
    const double angle = 6.283185307179586 * d[1];
    const double rad = 0.55 * d[2];
    const auto cr = static_cast<std::size_t>(L.cy + rad * L.ry * std::sin(angle));
    const auto cc = static_cast<std::size_t>(L.cx + rad * L.rx * std::cos(angle));
    for (std::size_t r = cr; r < cr + 2; ++r)
      for (std::size_t c = cc; c < cc + 2; ++c)
        if (mask[r * N + c]) px[r * N + c] = 1.0f;
  }

  for (auto& v : px) v = std::clamp(v, 0.0f, 1.0f);
  return {GrayImage(N, N, std::move(px)), LungMask(N, N, std::move(mask)), findings};
}

Sample generate_sample(Rng& rng) {
  const FindingSet f = sample_findings(rng);
  return render_sample(f, rng);
}

const std::vector<std::string>& all_tags() {
  static const std::vector<std::string> tags{"pneumothorax", "volume", "effusion", "calcification", "heart", "bone"};
  return tags;
}

RenderedReport render_report(const FindingSet& f) {
  f.validate();
  std::vector<std::string> sentences;
  sentences.push_back(f.heart_enlarged ? "the heart is mildly enlarged." :
                                         "the cardiomediastinal silhouette is within normal limits.");
  switch (f.lung_volume) {
    case LungVolume::low: sentences.push_back("low lung volume is present."); break;
    case LungVolume::normal: sentences.push_back("the lungs are clear."); break;
    case LungVolume::hyperexpanded: sentences.push_back("the lungs are hyperexpanded with increased volume."); break;
  }
  auto side = [](Side s) { return s == Side::left ? std::string("left") : std::string("right"); };
  if (f.has_effusion() && f.has_pneumothorax()) {
    sentences.push_back("there is a " + side(f.effusion) + " pleural effusion and a " + side(f.pneumothorax) +
                        " pneumothorax.");
  } else if (f.has_effusion()) {
    sentences.push_back("there is a small " + side(f.effusion) + " pleural effusion.");
  } else if (f.has_pneumothorax()) {
    sentences.push_back("there is a small " + side(f.pneumothorax) + " pneumothorax.");
  } else {
    sentences.push_back("the pleural spaces are normal.");
  }
  if (f.calcifications == 1) sentences.push_back("there is a single focus of calcification.");
  if (f.calcifications == 2) sentences.push_back("there are two foci of calcification.");
  sentences.push_back(f.bone_abnormality ? "there is an acute bone fracture." : "no acute osseous abnormality.");

  RenderedReport out;
  for (const auto& s : sentences) out.text += (out.text.empty() ? "" : " ") + s;
  const bool present[] = {f.has_pneumothorax(), f.lung_volume != LungVolume::normal, f.has_effusion(),
                          f.calcifications > 0, f.heart_enlarged,                    f.bone_abnormality};
  for (std::size_t i = 0; i < all_tags().size(); ++i)
    if (present[i]) out.tags.push_back(all_tags()[i]);
  return out;
}

std::string to_string(Split split) {
  switch (split) {
    case Split::train: return "train";
    case Split::val: return "val";
    case Split::test: return "test";
  }
  return "?";
}

Split parse_split(const std::string& name) {
  if (name == "train") return Split::train;
  if (name == "val") return Split::val;
  if (name == "test") return Split::test;
  throw ConfigError("unknown split '" + name + "' (expected train, val or test)");
}

std::vector<Split> split_dataset(std::size_t count, const std::array<double, 3>& ratios, std::uint64_t seed) {
  if (count == 0) throw ConfigError("split_dataset: no items to split");
  double total = 0.0;
  for (double r : ratios) {
    if (!(r >= 0.0)) throw ConfigError("split_dataset: ratios must be non-negative");
    total += r;
  }
  if (std::abs(total - 1.0) > 1e-9) throw ConfigError("split_dataset: ratios must sum to 1");

  std::array<std::size_t, 3> sizes{};
  std::array<double, 3> frac{};
  std::size_t assigned = 0;
  for (std::size_t s = 0; s < 3; ++s) {
    const double quota = static_cast<double>(count) * ratios[s];
    sizes[s] = static_cast<std::size_t>(std::floor(quota + 1e-9));
    frac[s] = std::round((quota - static_cast<double>(sizes[s])) * 1e9);
    assigned += sizes[s];
  }
  std::array<std::size_t, 3> order{0, 1, 2};
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return frac[a] > frac[b]; });
  for (std::size_t k = 0; assigned < count; ++k, ++assigned) ++sizes[order[k % 3]];

  std::vector<std::size_t> perm(count);
  std::iota(perm.begin(), perm.end(), 0);
  Rng rng(seed);
  for (std::size_t i = count - 1; i > 0; --i) std::swap(perm[i], perm[uniform_index(rng, i + 1)]);

  std::vector<Split> out(count);
  std::size_t pos = 0;
  for (std::size_t s = 0; s < 3; ++s)
    for (std::size_t k = 0; k < sizes[s]; ++k) out[perm[pos++]] = static_cast<Split>(s);
  return out;
}

namespace {
constexpr const char* kManifestHeader = "id\timage\tmask\tsplit\ttags\treport";
}

std::string DatasetManifest::serialize() const {
  std::string out = std::string(kManifestHeader) + "\n";
  for (const auto& r : records) {
    std::string tags;
    for (const auto& t : r.tags) tags += (tags.empty() ? "" : ",") + t;
    out += r.id + "\t" + r.image_path + "\t" + r.mask_path + "\t" + to_string(r.split) + "\t" + tags + "\t" +
           r.report + "\n";
  }
  return out;
}

DatasetManifest DatasetManifest::parse(const std::string& text) {
  std::istringstream in(text);
  std::string line;
  if (!std::getline(in, line) || line != kManifestHeader) throw FormatError("manifest header", "unexpected header");
  DatasetManifest m;
  std::size_t lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    const auto fields = split(line, '\t');
    const std::string where = fields.empty() || fields[0].empty() ? "line " + std::to_string(lineno) : fields[0];
    if (fields.size() != 6) throw FormatError(where, "expected 6 tab-separated fields");
    Record r;
    r.id = fields[0];
    r.image_path = fields[1];
    r.mask_path = fields[2];
    try {
      r.split = parse_split(fields[3]);
    } catch (const ConfigError& e) {
      throw FormatError(where, e.what());
    }
    if (!fields[4].empty()) r.tags = split(fields[4], ',');
    r.report = fields[5];
    for (const auto& other : m.records)
      if (other.id == r.id) throw FormatError(where, "duplicate id");
    m.records.push_back(std::move(r));
  }
  return m;
}

std::vector<std::size_t> Dataset::indices(Split split) const {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < manifest.records.size(); ++i)
    if (manifest.records[i].split == split) out.push_back(i);
  return out;
}

Dataset generate_dataset(const SynthConfig& config) {
  if (config.count == 0) throw ConfigError("synth: sample count must be positive");
  Dataset ds;
  const auto splits = split_dataset(config.count, config.ratios, derive_seed(config.seed, 0x5151));
  for (std::size_t i = 0; i < config.count; ++i) {
    Rng rng(derive_seed(config.seed, i));
    Sample s = generate_sample(rng);
    const RenderedReport rep = render_report(s.findings);
    char id[32];
    std::snprintf(id, sizeof id, "cxr%05zu", i);
    Record r;
    r.id = id;
    r.image_path = "images/" + r.id + ".pgm";
    r.mask_path = "masks/" + r.id + ".pgm";
    r.split = splits[i];
    r.tags = rep.tags;
    r.report = rep.text;
    ds.manifest.records.push_back(std::move(r));
    ds.images.push_back(std::move(s.image));
    ds.masks.push_back(std::move(s.mask));
  }
  return ds;
}

std::string encode_pgm(const GrayImage& img) {
  std::string out = "P5\n" + std::to_string(img.width()) + " " + std::to_string(img.height()) + "\n255\n";
  for (float v : img.pixels()) out += static_cast<char>(static_cast<unsigned char>(std::lround(v * 255.0f)));
  return out;
}

GrayImage decode_pgm(const std::string& bytes) {
  std::size_t pos = 0;
  auto skip_space = [&] {
    while (pos < bytes.size()) {
      if (bytes[pos] == '#') {
        while (pos < bytes.size() && bytes[pos] != '\n') ++pos;
      } else if (std::isspace(static_cast<unsigned char>(bytes[pos]))) {
        ++pos;
      } else {
        break;
      }
    }
  };
  auto number = [&](const char* what) {
    skip_space();
    std::size_t start = pos;
    while (pos < bytes.size() && std::isdigit(static_cast<unsigned char>(bytes[pos]))) ++pos;
    if (start == pos || pos - start > 6) throw FormatError("pgm", std::string("bad ") + what);
    return static_cast<std::size_t>(std::stoul(bytes.substr(start, pos - start)));
  };
  if (bytes.size() < 2 || bytes[0] != 'P' || bytes[1] != '5') throw FormatError("pgm", "not a binary P5 image");
  pos = 2;
  const std::size_t width = number("width"), height = number("height"), maxval = number("maxval");
  if (width == 0 || height == 0) throw FormatError("pgm", "zero dimension");
  if (maxval != 255) throw FormatError("pgm", "maxval must be 255");
  if (pos >= bytes.size() || !std::isspace(static_cast<unsigned char>(bytes[pos]))) {
    throw FormatError("pgm", "truncated header");
  }
  ++pos;
  if (bytes.size() - pos != width * height) {
    throw FormatError("pgm", "expected " + std::to_string(width * height) + " pixel bytes, found " +
                                 std::to_string(bytes.size() - pos));
  }
  std::vector<float> px(width * height);
  for (std::size_t i = 0; i < px.size(); ++i) px[i] = static_cast<unsigned char>(bytes[pos + i]) / 255.0f;
  return GrayImage(height, width, std::move(px));
}

LungMask mask_from_image(const GrayImage& img) {
  std::vector<std::uint8_t> m(img.pixels().size());
  for (std::size_t i = 0; i < m.size(); ++i) {
    const float v = img.pixels()[i];
    if (v != 0.0f && v != 1.0f) throw FormatError("mask", "mask pixels must be 0 or 255");
    m[i] = v == 1.0f ? 1 : 0;
  }
  return LungMask(img.height(), img.width(), std::move(m));
}

GrayImage mask_to_image(const LungMask& mask) {
  std::vector<float> px(mask.pixels().begin(), mask.pixels().end());
  return GrayImage(mask.height(), mask.width(), std::move(px));
}

namespace {

void write_file(const fs::path& path, const std::string& bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError(path.string(), "cannot open for writing");
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError(path.string(), "write failed");
}

std::string read_file(const fs::path& path, const std::string& record) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError(path.string(), "cannot open file for record '" + record + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

}  // namespace

void write_dataset(const Dataset& dataset, const std::string& root) {
  const auto& recs = dataset.manifest.records;
  if (dataset.images.size() != recs.size() || dataset.masks.size() != recs.size()) {
    throw ShapeError("write_dataset", Shape{recs.size()}, Shape{dataset.images.size(), dataset.masks.size()});
  }
  std::error_code ec;
  fs::create_directories(fs::path(root) / "images", ec);
  if (!ec) fs::create_directories(fs::path(root) / "masks", ec);
  if (ec) throw IoError(root, "cannot create dataset directories: " + ec.message());
  for (std::size_t i = 0; i < recs.size(); ++i) {
    write_file(fs::path(root) / recs[i].image_path, encode_pgm(dataset.images[i]));
    write_file(fs::path(root) / recs[i].mask_path, encode_pgm(mask_to_image(dataset.masks[i])));
  }
  write_file(fs::path(root) / "manifest.tsv", dataset.manifest.serialize());
}

DatasetManifest read_manifest(const std::string& root) {
  return DatasetManifest::parse(read_file(fs::path(root) / "manifest.tsv", "manifest"));
}

Dataset read_dataset(const std::string& root) {
  Dataset ds;
  ds.manifest = read_manifest(root);
  for (const auto& r : ds.manifest.records) {
    try {
      ds.images.push_back(decode_pgm(read_file(fs::path(root) / r.image_path, r.id)));
      ds.masks.push_back(mask_from_image(decode_pgm(read_file(fs::path(root) / r.mask_path, r.id))));
    } catch (const FormatError& e) {
      throw FormatError(r.id, e.what());
    } catch (const Error& e) {
      if (dynamic_cast<const IoError*>(&e)) throw;
      throw FormatError(r.id, e.what());
    }
    if (ds.images.back().height() != ds.masks.back().height() || ds.images.back().width() != ds.masks.back().width()) {
      throw FormatError(r.id, "image and mask sizes differ");
    }
  }
  return ds;
}

}  // namespace cxr
