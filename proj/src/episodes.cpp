#include "bhfa/episodes.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <set>

#include "json.hpp"

#include "bhfa/errors.hpp"
#include "bhfa/numeric.hpp"

namespace fs = std::filesystem;

namespace bhfa {

std::string split_name(Split s) {
  switch (s) {
    case Split::base: return "base";
    case Split::validation: return "validation";
    case Split::test: return "test";
  }
  return "?";
}

std::vector<std::vector<int>> LabeledDataset::by_class() const {
  std::vector<std::vector<int>> out(static_cast<std::size_t>(n_classes()));
  for (std::size_t i = 0; i < labels.size(); ++i)
    out[static_cast<std::size_t>(labels[i])].push_back(static_cast<int>(i));
  return out;
}

void LabeledDataset::validate() const {
  require(images.size() == labels.size(), "LabeledDataset: one label per image required");
  for (int label : labels)
    require(label >= 0 && label < n_classes(), "LabeledDataset: label out of range");
  for (const Tensor& img : images) {
    require(img.ndim() == 3, "LabeledDataset: images must be (C,H,W)");
    require(img.same_shape(images.front()), "LabeledDataset: images must share one shape");
  }
}

void EpisodeSpec::validate() const {
  require(ways >= 2, "EpisodeSpec: ways must be >= 2");
  require(n_shot >= 1, "EpisodeSpec: n_shot must be >= 1");
  require(n_query >= 1, "EpisodeSpec: n_query must be >= 1");
}

// --------------------------------------------------------------------- codecs

namespace {

// Reads one PNM header token, skipping whitespace and # comments.
std::string pnm_token(std::istream& is, const std::string& path) {
  std::string tok;
  int c;
  while ((c = is.get()) != EOF) {
    if (c == '#') {
      while ((c = is.get()) != EOF && c != '\n') {
      }
      continue;
    }
    if (std::isspace(c)) {
      if (!tok.empty()) return tok;
      continue;
    }
    tok.push_back(static_cast<char>(c));
  }
  if (tok.empty()) throw IoError("truncated image header: " + path);
  return tok;
}

int pnm_int(std::istream& is, const std::string& path) {
  const std::string tok = pnm_token(is, path);
  try {
    std::size_t used = 0;
    const int v = std::stoi(tok, &used);
    if (used != tok.size() || v < 0) throw std::invalid_argument(tok);
    return v;
  } catch (const std::exception&) {
    throw IoError("bad integer '" + tok + "' in image header: " + path);
  }
}

void write_u32_le(std::ostream& os, std::uint32_t v) {
  unsigned char b[4] = {static_cast<unsigned char>(v), static_cast<unsigned char>(v >> 8),
                        static_cast<unsigned char>(v >> 16), static_cast<unsigned char>(v >> 24)};
  os.write(reinterpret_cast<const char*>(b), 4);
}

std::uint32_t read_u32_le(std::istream& is, const std::string& path) {
  unsigned char b[4];
  is.read(reinterpret_cast<char*>(b), 4);
  if (!is) throw IoError("truncated tensor file: " + path);
  return static_cast<std::uint32_t>(b[0]) | static_cast<std::uint32_t>(b[1]) << 8 |
         static_cast<std::uint32_t>(b[2]) << 16 | static_cast<std::uint32_t>(b[3]) << 24;
}

}  // namespace

Tensor decode_pnm(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot open image: " + path);
  const std::string magic = pnm_token(is, path);
  int channels = 0;
  if (magic == "P6")
    channels = 3;
  else if (magic == "P5")
    channels = 1;
  else
    throw IoError("unsupported image magic '" + magic + "' in " + path);
  const int w = pnm_int(is, path);
  const int h = pnm_int(is, path);
  const int maxval = pnm_int(is, path);
  if (w < 1 || h < 1) throw IoError("bad image dimensions in " + path);
  if (maxval != 255) throw IoError("only 8-bit images supported (maxval 255): " + path);
  // exactly one whitespace byte separates the header from the raster
  std::vector<unsigned char> raw(static_cast<std::size_t>(w) * h * channels);
  is.read(reinterpret_cast<char*>(raw.data()), static_cast<std::streamsize>(raw.size()));
  if (!is) throw IoError("truncated raster data: " + path);
  Tensor out({channels, h, w});
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x)
      for (int c = 0; c < channels; ++c)
        out.at(c, y, x) =
            raw[(static_cast<std::size_t>(y) * w + x) * channels + c] / 255.0;
  return out;
}

Tensor resize_nearest(const Tensor& image, int side) {
  require(image.ndim() == 3, "resize_nearest: image must be (C,H,W)");
  require(side >= 1, "resize_nearest: side must be >= 1");
  const int c = image.dim(0), h = image.dim(1), w = image.dim(2);
  if (h == side && w == side) return image;
  Tensor out({c, side, side});
  for (int y = 0; y < side; ++y) {
    const int sy = std::min(h - 1, static_cast<int>((static_cast<double>(y) + 0.5) * h / side));
    for (int x = 0; x < side; ++x) {
      const int sx = std::min(w - 1, static_cast<int>((static_cast<double>(x) + 0.5) * w / side));
      for (int ic = 0; ic < c; ++ic) out.at(ic, y, x) = image.at(ic, sy, sx);
    }
  }
  return out;
}

void save_bhft(const std::string& path, const std::vector<Tensor>& images) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw IoError("cannot write tensor file: " + path);
  os.write("BHFT", 4);
  write_u32_le(os, static_cast<std::uint32_t>(images.size()));
  for (const Tensor& img : images) {
    require(img.ndim() == 3, "save_bhft: images must be (C,H,W)");
    write_u32_le(os, static_cast<std::uint32_t>(img.dim(0)));
    write_u32_le(os, static_cast<std::uint32_t>(img.dim(1)));
    write_u32_le(os, static_cast<std::uint32_t>(img.dim(2)));
    for (std::size_t i = 0; i < img.numel(); ++i) {
      const std::uint64_t bits = std::bit_cast<std::uint64_t>(img[i]);
      write_u32_le(os, static_cast<std::uint32_t>(bits));
      write_u32_le(os, static_cast<std::uint32_t>(bits >> 32));
    }
  }
  if (!os) throw IoError("short write on tensor file: " + path);
}

std::vector<Tensor> load_bhft(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot open tensor file: " + path);
  char magic[4];
  is.read(magic, 4);
  if (!is || std::string(magic, 4) != "BHFT")
    throw IoError("not a raw tensor file (bad magic): " + path);
  const std::uint32_t count = read_u32_le(is, path);
  std::vector<Tensor> out;
  out.reserve(count);
  for (std::uint32_t i = 0; i < count; ++i) {
    const int c = static_cast<int>(read_u32_le(is, path));
    const int h = static_cast<int>(read_u32_le(is, path));
    const int w = static_cast<int>(read_u32_le(is, path));
    if (c < 1 || h < 1 || w < 1) throw IoError("bad image shape in tensor file: " + path);
    Tensor img({c, h, w});
    for (std::size_t j = 0; j < img.numel(); ++j) {
      const std::uint64_t lo = read_u32_le(is, path);
      const std::uint64_t hi = read_u32_le(is, path);
      img[j] = std::bit_cast<double>(lo | hi << 32);
    }
    out.push_back(std::move(img));
  }
  return out;
}

// ------------------------------------------------------------------- datasets

namespace {

struct RatioCounts {
  int train, valid, test;
};

RatioCounts ratio_412(int n) {
  const int valid = n / 7;
  const int test = 2 * n / 7;
  return {n - valid - test, valid, test};
}

// Slice [begin, end) of this class's samples for the requested split.
std::pair<int, int> ratio_range(int n, Split split) {
  const RatioCounts c = ratio_412(n);
  switch (split) {
    case Split::base: return {0, c.train};
    case Split::validation: return {c.train, c.train + c.valid};
    case Split::test: return {c.train + c.valid, n};
  }
  return {0, 0};
}

LabeledDataset dataset_from_class_samples(std::vector<std::string> class_names,
                                          std::vector<std::vector<Tensor>> samples_per_class,
                                          const SplitAssignment& assign) {
  LabeledDataset out;
  out.split = assign.split;
  if (assign.ratio_mode()) {
    out.class_names = std::move(class_names);
    for (std::size_t c = 0; c < samples_per_class.size(); ++c) {
      auto& samples = samples_per_class[c];
      const auto [begin, end] = ratio_range(static_cast<int>(samples.size()), assign.split);
      for (int i = begin; i < end; ++i) {
        out.images.push_back(std::move(samples[static_cast<std::size_t>(i)]));
        out.labels.push_back(static_cast<int>(c));
      }
    }
  } else {
    std::set<std::string> base(assign.base_classes.begin(), assign.base_classes.end());
    for (const std::string& name : assign.test_classes)
      require(!base.count(name),
              "split lists: class '" + name + "' appears in both the base and test lists");
    const std::vector<std::string>* wanted = nullptr;
    switch (assign.split) {
      case Split::base: wanted = &assign.base_classes; break;
      case Split::validation: wanted = &assign.validation_classes; break;
      case Split::test: wanted = &assign.test_classes; break;
    }
    for (const std::string& name : *wanted) {
      auto it = std::find(class_names.begin(), class_names.end(), name);
      if (it == class_names.end())
        throw IoError("split lists: class '" + name + "' not present in the dataset");
      const std::size_t c = static_cast<std::size_t>(it - class_names.begin());
      out.class_names.push_back(name);
      for (Tensor& img : samples_per_class[c]) {
        out.images.push_back(std::move(img));
        out.labels.push_back(static_cast<int>(out.class_names.size()) - 1);
      }
    }
  }
  out.validate();
  return out;
}

}  // namespace

LabeledDataset load_image_directory(const std::string& path, const SplitAssignment& assign) {
  require(assign.side >= 1, "load_image_directory: side must be >= 1");
  const fs::path root(path);
  if (!fs::is_directory(root)) throw IoError("dataset directory not found: " + path);

  // BHFT dataset layout: manifest.json naming one tensor file and per-image labels
  const fs::path manifest_path = root / "manifest.json";
  std::vector<std::string> class_names;
  std::vector<std::vector<Tensor>> samples;
  if (fs::exists(manifest_path)) {
    std::ifstream mf(manifest_path);
    if (!mf) throw IoError("cannot open manifest: " + manifest_path.string());
    nlohmann::json j;
    try {
      mf >> j;
    } catch (const std::exception& e) {
      throw IoError("bad manifest " + manifest_path.string() + ": " + e.what());
    }
    class_names = j.at("class_names").get<std::vector<std::string>>();
    const auto labels = j.at("labels").get<std::vector<int>>();
    const std::string file = j.at("file").get<std::string>();
    std::vector<Tensor> images = load_bhft((root / file).string());
    if (images.size() != labels.size())
      throw IoError("manifest label count does not match image count: " + manifest_path.string());
    samples.resize(class_names.size());
    for (std::size_t i = 0; i < images.size(); ++i) {
      const int label = labels[i];
      require(label >= 0 && label < static_cast<int>(class_names.size()),
              "manifest label out of range: " + manifest_path.string());
      samples[static_cast<std::size_t>(label)].push_back(
          resize_nearest(images[i], assign.side));
    }
    for (std::size_t c = 0; c < class_names.size(); ++c)
      if (samples[c].empty())
        throw IoError("class '" + class_names[c] + "' has no samples in " + path);
    return dataset_from_class_samples(std::move(class_names), std::move(samples), assign);
  }

  // class-folder layout
  std::vector<fs::path> class_dirs;
  for (const auto& entry : fs::directory_iterator(root))
    if (entry.is_directory()) class_dirs.push_back(entry.path());
  std::sort(class_dirs.begin(), class_dirs.end());
  if (class_dirs.empty()) throw IoError("no class subdirectories in " + path);

  for (const fs::path& dir : class_dirs) {
    std::vector<fs::path> files;
    for (const auto& entry : fs::directory_iterator(dir))
      if (entry.is_regular_file()) files.push_back(entry.path());
    std::sort(files.begin(), files.end());
    std::vector<Tensor> imgs;
    for (const fs::path& file : files) {
      const std::string ext = file.extension().string();
      if (ext == ".ppm" || ext == ".pgm") {
        imgs.push_back(resize_nearest(decode_pnm(file.string()), assign.side));
      } else if (ext == ".bhft") {
        for (Tensor& img : load_bhft(file.string()))
          imgs.push_back(resize_nearest(img, assign.side));
      }
    }
    if (imgs.empty()) throw IoError("class directory has no images: " + dir.string());
    class_names.push_back(dir.filename().string());
    samples.push_back(std::move(imgs));
  }
  return dataset_from_class_samples(std::move(class_names), std::move(samples), assign);
}

void save_bhft_dataset(const std::string& dir, const LabeledDataset& ds) {
  ds.validate();
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (!fs::is_directory(dir)) throw IoError("cannot create dataset directory: " + dir);
  save_bhft((fs::path(dir) / "dataset.bhft").string(), ds.images);
  nlohmann::json j;
  j["format"] = "bhft-dataset";
  j["file"] = "dataset.bhft";
  j["class_names"] = ds.class_names;
  j["labels"] = ds.labels;
  const fs::path manifest = fs::path(dir) / "manifest.json";
  std::ofstream os(manifest);
  if (!os) throw IoError("cannot write manifest: " + manifest.string());
  os << j.dump(2) << "\n";
  if (!os) throw IoError("short write on manifest: " + manifest.string());
}

LabeledDataset split_ratio(const LabeledDataset& ds, Split split) {
  LabeledDataset out;
  out.split = split;
  out.class_names = ds.class_names;
  for (const auto& members : ds.by_class()) {
    const auto [begin, end] = ratio_range(static_cast<int>(members.size()), split);
    for (int i = begin; i < end; ++i) {
      out.images.push_back(ds.images[static_cast<std::size_t>(members[static_cast<std::size_t>(i)])]);
      out.labels.push_back(ds.labels[static_cast<std::size_t>(members[static_cast<std::size_t>(i)])]);
    }
  }
  out.validate();
  return out;
}

// ------------------------------------------------------------------ synthetic

namespace {

// Every template is built from the same parts: sixteen equal-width Gaussian
// bumps, two positive and two negative per image quadrant, at seeded random
// positions. Classes therefore share their coarse intensity statistics
// (global mean, per-quadrant energy, local texture makeup) and differ only in
// the fine-scale arrangement of the bumps, so an episode is decided by where
// structure sits rather than by how much of it there is.
std::vector<Tensor> draw_templates(int n_classes, int side, Rng& rng) {
  std::vector<Tensor> out;
  out.reserve(static_cast<std::size_t>(n_classes));
  const double s = static_cast<double>(side);
  const double amp = 0.4;
  const double width = 0.09 * s;
  const double margin = 0.1 * s;
  for (int c = 0; c < n_classes; ++c) {
    Tensor tpl({1, side, side});
    struct Bump {
      double cx, cy, amp;
    };
    std::vector<Bump> bumps;
    for (int qy = 0; qy < 2; ++qy)
      for (int qx = 0; qx < 2; ++qx)
        for (int pair = 0; pair < 2; ++pair)
          for (int sign = 0; sign < 2; ++sign)
            bumps.push_back({rng.uniform(qx * 0.5 * s + margin, (qx + 1) * 0.5 * s - margin),
                             rng.uniform(qy * 0.5 * s + margin, (qy + 1) * 0.5 * s - margin),
                             sign == 0 ? amp : -amp});
    for (int y = 0; y < side; ++y)
      for (int x = 0; x < side; ++x) {
        double v = 0.5;
        for (const Bump& b : bumps) {
          const double dx = x - b.cx, dy = y - b.cy;
          v += b.amp * std::exp(-(dx * dx + dy * dy) / (2.0 * width * width));
        }
        tpl.at(0, y, x) = clamp(v, 0.0, 1.0);
      }
    out.push_back(std::move(tpl));
  }
  return out;
}

double mean_pairwise_l2(const std::vector<Tensor>& templates) {
  double acc = 0.0;
  int pairs = 0;
  for (std::size_t a = 0; a < templates.size(); ++a)
    for (std::size_t b = a + 1; b < templates.size(); ++b) {
      double d2 = 0.0;
      for (std::size_t i = 0; i < templates[a].numel(); ++i) {
        const double diff = templates[a][i] - templates[b][i];
        d2 += diff * diff;
      }
      acc += std::sqrt(d2);
      ++pairs;
    }
  return pairs > 0 ? acc / pairs : 0.0;
}

}  // namespace

LabeledDataset synth_blobs(int n_classes, int per_class, int image_side, double noise_sigma,
                           std::uint64_t seed) {
  require(n_classes >= 2, "synth_blobs: n_classes must be >= 2");
  require(per_class >= 1, "synth_blobs: per_class must be >= 1");
  require(image_side >= 4, "synth_blobs: image_side must be >= 4");
  require(noise_sigma >= 0.0, "synth_blobs: noise_sigma must be >= 0");

  // Redraw templates until classes are well separated relative to the sample
  // noise; keep the best attempt if the target is out of reach.
  const double pixels = static_cast<double>(image_side) * image_side;
  const double target = 5.0 * noise_sigma * std::sqrt(pixels);
  constexpr int kMaxAttempts = 64;
  std::vector<Tensor> templates;
  double best_sep = -1.0;
  for (int attempt = 0; attempt < kMaxAttempts; ++attempt) {
    Rng rng(derive_seed(seed, seed_tag::kTemplates, static_cast<std::uint64_t>(attempt)));
    std::vector<Tensor> cand = draw_templates(n_classes, image_side, rng);
    const double sep = mean_pairwise_l2(cand);
    if (sep > best_sep) {
      best_sep = sep;
      templates = std::move(cand);
    }
    if (best_sep >= target) break;
  }

  LabeledDataset out;
  out.split = Split::base;
  NoiseSource noise(derive_seed(seed, seed_tag::kSamples));
  for (int c = 0; c < n_classes; ++c) {
    out.class_names.push_back("blob" + std::to_string(c));
    for (int i = 0; i < per_class; ++i) {
      Tensor img = templates[static_cast<std::size_t>(c)];
      for (std::size_t j = 0; j < img.numel(); ++j)
        img[j] = clamp(img[j] + noise_sigma * noise.next(), 0.0, 1.0);
      out.images.push_back(std::move(img));
      out.labels.push_back(c);
    }
  }
  out.validate();
  return out;
}

// ------------------------------------------------------------------- episodes

Episode sample_episode(const LabeledDataset& ds, const EpisodeSpec& spec) {
  spec.validate();
  ds.validate();
  const int need = spec.n_shot + spec.n_query;
  const auto by_class = ds.by_class();
  std::vector<int> eligible;
  for (int c = 0; c < ds.n_classes(); ++c)
    if (static_cast<int>(by_class[static_cast<std::size_t>(c)].size()) >= need)
      eligible.push_back(c);
  if (static_cast<int>(eligible.size()) < spec.ways) {
    std::string deficient = "(none)";
    for (int c = 0; c < ds.n_classes(); ++c)
      if (static_cast<int>(by_class[static_cast<std::size_t>(c)].size()) < need) {
        deficient = ds.class_names[static_cast<std::size_t>(c)];
        break;
      }
    throw ContractViolation("sample_episode: only " + std::to_string(eligible.size()) +
                            " classes own >= " + std::to_string(need) +
                            " samples (first deficient class: '" + deficient + "'), need " +
                            std::to_string(spec.ways));
  }

  Rng rng(spec.seed);
  const std::vector<int> picked = rng.choose(static_cast<int>(eligible.size()), spec.ways);

  const Tensor& shape_ref = ds.images.front();
  const int c = shape_ref.dim(0), h = shape_ref.dim(1), w = shape_ref.dim(2);
  const std::size_t img_sz = shape_ref.numel();
  Episode ep;
  ep.support = Tensor({spec.ways * spec.n_shot, c, h, w});
  ep.query = Tensor({spec.ways * spec.n_query, c, h, w});
  int s_row = 0, q_row = 0;
  for (int way = 0; way < spec.ways; ++way) {
    const int cls = eligible[static_cast<std::size_t>(picked[static_cast<std::size_t>(way)])];
    ep.class_map.push_back(cls);
    const auto& pool = by_class[static_cast<std::size_t>(cls)];
    const std::vector<int> sel = rng.choose(static_cast<int>(pool.size()), need);
    for (int i = 0; i < need; ++i) {
      const Tensor& img = ds.images[static_cast<std::size_t>(pool[static_cast<std::size_t>(sel[static_cast<std::size_t>(i)])])];
      if (i < spec.n_shot) {
        std::copy(img.data(), img.data() + img_sz, ep.support.data() + s_row * img_sz);
        ep.support_class.push_back(way);
        ++s_row;
      } else {
        std::copy(img.data(), img.data() + img_sz, ep.query.data() + q_row * img_sz);
        ep.query_class.push_back(way);
        ++q_row;
      }
    }
  }
  return ep;
}

// --------------------------------------------------------------- augmentation

Tensor augment_with(const Tensor& image, bool hflip, bool vflip, int quarter_turns) {
  require(image.ndim() == 3, "augment_with: image must be (C,H,W)");
  require(quarter_turns >= 0 && quarter_turns <= 3, "augment_with: quarter_turns in 0..3");
  const int c = image.dim(0), h = image.dim(1), w = image.dim(2);
  if (quarter_turns != 0) require(h == w, "augment_with: rotation requires a square image");

  Tensor out = image;
  if (hflip) {
    Tensor tmp = out;
    for (int ic = 0; ic < c; ++ic)
      for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) out.at(ic, y, x) = tmp.at(ic, y, w - 1 - x);
  }
  if (vflip) {
    Tensor tmp = out;
    for (int ic = 0; ic < c; ++ic)
      for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) out.at(ic, y, x) = tmp.at(ic, h - 1 - y, x);
  }
  for (int turn = 0; turn < quarter_turns; ++turn) {
    Tensor tmp = out;
    // 90 degrees counterclockwise: (y, x) <- (x, W-1-y)
    for (int ic = 0; ic < c; ++ic)
      for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) out.at(ic, y, x) = tmp.at(ic, x, w - 1 - y);
  }
  return out;
}

Tensor augment(const Tensor& image, Rng& rng) {
  const bool hflip = rng.unit() < 0.5;
  const bool vflip = rng.unit() < 0.5;
  const bool rotate = rng.unit() < 0.5;
  const int quarter = rotate ? 1 + static_cast<int>(rng.uniform_int(3)) : 0;
  return augment_with(image, hflip, vflip, quarter);
}

}  // namespace bhfa
