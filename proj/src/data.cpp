#include "robustleak/data.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <sstream>
#include <vector>

namespace robustleak {

std::string format_double(double v) {
  char buf[32];
  auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), v);
  (void)ec;
  return std::string(buf, ptr);
}

namespace {

double parse_double(const std::string& tok, int line_no) {
  double v = 0.0;
  auto [ptr, ec] = std::from_chars(tok.data(), tok.data() + tok.size(), v);
  if (ec != std::errc() || ptr != tok.data() + tok.size())
    throw ParseError("line " + std::to_string(line_no) + ": bad number '" + tok + "'");
  return v;
}

long parse_long(const std::string& tok, int line_no) {
  long v = 0;
  auto [ptr, ec] = std::from_chars(tok.data(), tok.data() + tok.size(), v);
  if (ec != std::errc() || ptr != tok.data() + tok.size())
    throw ParseError("line " + std::to_string(line_no) + ": bad integer '" + tok + "'");
  return v;
}

std::vector<std::string> split_fields(const std::string& line) {
  std::vector<std::string> out;
  std::string cur;
  for (char ch : line) {
    if (ch == ',') {
      out.push_back(cur);
      cur.clear();
    } else {
      cur += ch;
    }
  }
  out.push_back(cur);
  for (auto& f : out) {
    while (!f.empty() && (f.front() == ' ' || f.front() == '\t')) f.erase(f.begin());
    while (!f.empty() && (f.back() == ' ' || f.back() == '\t')) f.pop_back();
  }
  return out;
}

std::uint32_t read_be32(std::istream& in, const std::string& what) {
  unsigned char b[4];
  in.read(reinterpret_cast<char*>(b), 4);
  if (!in) throw IoError(what + ": truncated header");
  return (std::uint32_t(b[0]) << 24) | (std::uint32_t(b[1]) << 16) |
         (std::uint32_t(b[2]) << 8) | std::uint32_t(b[3]);
}

void check_compatible(const LabeledDataset& a, const LabeledDataset& b, const char* what) {
  if (a.feature_dim != b.feature_dim || a.num_classes != b.num_classes)
    throw std::invalid_argument(std::string(what) + ": datasets have different shapes");
  if ((a.box_low.array() != b.box_low.array()).any() ||
      (a.box_high.array() != b.box_high.array()).any())
    throw std::invalid_argument(std::string(what) + ": datasets have different box bounds");
}

}  // namespace

LabeledDataset gen_synthetic(int classes, int per_class, int dim, double spread,
                             std::uint64_t seed) {
  if (classes < 2) throw std::invalid_argument("gen_synthetic: need at least 2 classes");
  if (per_class < 1) throw std::invalid_argument("gen_synthetic: per_class must be positive");
  if (dim < 2) throw std::invalid_argument("gen_synthetic: need at least 2 dimensions");
  if (!(spread > 0.0)) throw std::invalid_argument("gen_synthetic: spread must be positive");

  RngStream root(seed);
  RngStream center_rng = root.child(1);
  RngStream noise_rng = root.child(2);

  std::vector<Vec> centers(static_cast<std::size_t>(classes));
  for (auto& c : centers) c = center_rng.uniform_vec(dim, 0.2, 0.8);

  LabeledDataset out;
  out.feature_dim = dim;
  out.num_classes = classes;
  out.box_low = Vec::Zero(dim);
  out.box_high = Vec::Ones(dim);
  out.examples.reserve(static_cast<std::size_t>(classes) * per_class);
  std::int64_t next_id = 0;
  for (int c = 0; c < classes; ++c) {
    for (int i = 0; i < per_class; ++i) {
      Example ex;
      ex.x = (centers[c] + std::sqrt(spread) * noise_rng.normal_vec(dim)).cwiseMax(0.0).cwiseMin(1.0);
      ex.y = c;
      ex.id = next_id++;
      out.examples.push_back(std::move(ex));
    }
  }
  return out;
}

LabeledDataset load_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("load_csv: cannot open '" + path + "'");

  double box_lo = 0.0, box_hi = 1.0;
  LabeledDataset out;
  std::string line;
  int line_no = 0;
  bool saw_data = false;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    if (line[0] == '#') {
      std::istringstream ls(line.substr(1));
      std::string word;
      ls >> word;
      if (word == "box") {
        if (saw_data)
          throw ParseError("line " + std::to_string(line_no) + ": box comment after data rows");
        if (!(ls >> box_lo >> box_hi) || box_lo > box_hi)
          throw ParseError("line " + std::to_string(line_no) + ": malformed box comment");
      }
      continue;
    }
    std::vector<std::string> fields = split_fields(line);
    if (!saw_data && fields[0] == "label") continue;  // header row
    if (fields.size() < 2)
      throw ParseError("line " + std::to_string(line_no) + ": expected label and features");

    long label = parse_long(fields[0], line_no);
    if (label < 0)
      throw SchemaError("line " + std::to_string(line_no) + ": negative label");
    Example ex;
    ex.x.resize(static_cast<Eigen::Index>(fields.size()) - 1);
    for (std::size_t i = 1; i < fields.size(); ++i) {
      double v = parse_double(fields[i], line_no);
      if (v < box_lo || v > box_hi)
        throw SchemaError("line " + std::to_string(line_no) + ": feature " +
                          std::to_string(i) + " outside [" + format_double(box_lo) + ", " +
                          format_double(box_hi) + "]");
      ex.x[static_cast<Eigen::Index>(i) - 1] = v;
    }
    ex.y = static_cast<int>(label);
    ex.id = static_cast<std::int64_t>(out.examples.size());

    if (!saw_data) {
      out.feature_dim = static_cast<int>(ex.x.size());
      saw_data = true;
    } else if (ex.x.size() != out.feature_dim) {
      throw SchemaError("line " + std::to_string(line_no) + ": expected " +
                        std::to_string(out.feature_dim) + " features, got " +
                        std::to_string(ex.x.size()));
    }
    out.num_classes = std::max(out.num_classes, ex.y + 1);
    out.examples.push_back(std::move(ex));
  }
  if (!saw_data) throw SchemaError("load_csv: '" + path + "' has no data rows");
  out.num_classes = std::max(out.num_classes, 2);
  out.box_low = Vec::Constant(out.feature_dim, box_lo);
  out.box_high = Vec::Constant(out.feature_dim, box_hi);
  return out;
}

void save_csv(const LabeledDataset& data, const std::string& path) {
  if (data.examples.empty()) throw std::invalid_argument("save_csv: empty dataset");
  double lo = data.box_low[0], hi = data.box_high[0];
  if ((data.box_low.array() != lo).any() || (data.box_high.array() != hi).any())
    throw std::invalid_argument("save_csv: csv only supports uniform box bounds");

  std::ofstream out(path);
  if (!out) throw IoError("save_csv: cannot open '" + path + "'");
  out << "# box " << format_double(lo) << " " << format_double(hi) << "\n";
  out << "label";
  for (int i = 1; i <= data.feature_dim; ++i) out << ",f" << i;
  out << "\n";
  for (const Example& ex : data.examples) {
    out << ex.y;
    for (Eigen::Index i = 0; i < ex.x.size(); ++i) out << "," << format_double(ex.x[i]);
    out << "\n";
  }
  if (!out) throw IoError("save_csv: write to '" + path + "' failed");
}

LabeledDataset load_idx(const std::string& images_path, const std::string& labels_path) {
  std::ifstream img(images_path, std::ios::binary);
  if (!img) throw IoError("load_idx: cannot open '" + images_path + "'");
  std::ifstream lab(labels_path, std::ios::binary);
  if (!lab) throw IoError("load_idx: cannot open '" + labels_path + "'");

  std::uint32_t img_magic = read_be32(img, images_path);
  if (img_magic != 0x00000803u)
    throw FormatError("load_idx: '" + images_path + "' has image magic " +
                      std::to_string(img_magic) + ", expected 2051");
  std::uint32_t n_img = read_be32(img, images_path);
  std::uint32_t rows = read_be32(img, images_path);
  std::uint32_t cols = read_be32(img, images_path);

  std::uint32_t lab_magic = read_be32(lab, labels_path);
  if (lab_magic != 0x00000801u)
    throw FormatError("load_idx: '" + labels_path + "' has label magic " +
                      std::to_string(lab_magic) + ", expected 2049");
  std::uint32_t n_lab = read_be32(lab, labels_path);
  if (n_img != n_lab)
    throw SchemaError("load_idx: " + std::to_string(n_img) + " images but " +
                      std::to_string(n_lab) + " labels");
  if (n_img == 0) throw SchemaError("load_idx: empty dataset");
  if (rows == 0 || cols == 0) throw FormatError("load_idx: zero image dimensions");

  const std::size_t dim = std::size_t(rows) * cols;
  std::vector<unsigned char> pixels(dim);
  LabeledDataset out;
  out.feature_dim = static_cast<int>(dim);
  out.box_low = Vec::Zero(static_cast<Eigen::Index>(dim));
  out.box_high = Vec::Ones(static_cast<Eigen::Index>(dim));
  out.examples.reserve(n_img);
  int max_label = 0;
  for (std::uint32_t i = 0; i < n_img; ++i) {
    img.read(reinterpret_cast<char*>(pixels.data()), static_cast<std::streamsize>(dim));
    if (!img) throw IoError("load_idx: '" + images_path + "' truncated at image " +
                            std::to_string(i));
    char lb = 0;
    lab.read(&lb, 1);
    if (!lab) throw IoError("load_idx: '" + labels_path + "' truncated at label " +
                            std::to_string(i));
    Example ex;
    ex.x.resize(static_cast<Eigen::Index>(dim));
    for (std::size_t p = 0; p < dim; ++p)
      ex.x[static_cast<Eigen::Index>(p)] = double(pixels[p]) / 255.0;
    ex.y = static_cast<unsigned char>(lb);
    ex.id = static_cast<std::int64_t>(i);
    max_label = std::max(max_label, ex.y);
    out.examples.push_back(std::move(ex));
  }
  out.num_classes = std::max(max_label + 1, 2);
  return out;
}

Split make_split(const LabeledDataset& data, int train_n, int test_n,
                 int shadow_train_n, int shadow_test_n, std::uint64_t seed, bool stratified) {
  if (train_n < 0 || test_n < 0 || shadow_train_n < 0 || shadow_test_n < 0)
    throw std::invalid_argument("make_split: part sizes must be non-negative");
  const long total = long(train_n) + test_n + shadow_train_n + shadow_test_n;
  if (total > static_cast<long>(data.size()))
    throw std::invalid_argument("make_split: parts need " + std::to_string(total) +
                                " examples, dataset has " + std::to_string(data.size()));

  LabeledDataset* parts[4];
  Split split;
  parts[0] = &split.train;
  parts[1] = &split.test;
  parts[2] = &split.shadow_train;
  parts[3] = &split.shadow_test;
  const int sizes[4] = {train_n, test_n, shadow_train_n, shadow_test_n};
  for (auto* p : parts) {
    p->feature_dim = data.feature_dim;
    p->num_classes = data.num_classes;
    p->box_low = data.box_low;
    p->box_high = data.box_high;
  }

  RngStream rng(seed);
  if (!stratified) {
    std::vector<std::size_t> order(data.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    rng.shuffle(order);
    std::size_t pos = 0;
    for (int p = 0; p < 4; ++p)
      for (int i = 0; i < sizes[p]; ++i) parts[p]->examples.push_back(data.examples[order[pos++]]);
    return split;
  }

  const int k = data.num_classes;
  std::vector<std::vector<std::size_t>> by_class(static_cast<std::size_t>(k));
  for (std::size_t i = 0; i < data.size(); ++i) {
    int y = data.examples[i].y;
    if (y < 0 || y >= k)
      throw SchemaError("make_split: label " + std::to_string(y) + " out of range");
    by_class[static_cast<std::size_t>(y)].push_back(i);
  }
  for (auto& idx : by_class) rng.shuffle(idx);

  // Per-class quota for a part of size s: s/k each, remainder spread over the
  // lowest class indices.
  std::vector<std::size_t> cursor(static_cast<std::size_t>(k), 0);
  for (int p = 0; p < 4; ++p) {
    for (int c = 0; c < k; ++c) {
      int quota = sizes[p] / k + (c < sizes[p] % k ? 1 : 0);
      auto& pool = by_class[static_cast<std::size_t>(c)];
      auto& cur = cursor[static_cast<std::size_t>(c)];
      if (cur + static_cast<std::size_t>(quota) > pool.size())
        throw std::invalid_argument("make_split: class " + std::to_string(c) +
                                    " has too few examples for a stratified split");
      for (int i = 0; i < quota; ++i) parts[p]->examples.push_back(data.examples[pool[cur++]]);
    }
  }
  return split;
}

LabeledDataset concat(const LabeledDataset& a, const LabeledDataset& b) {
  if (a.examples.empty()) return b;
  if (b.examples.empty()) return a;
  check_compatible(a, b, "concat");
  LabeledDataset out = a;
  out.examples.insert(out.examples.end(), b.examples.begin(), b.examples.end());
  return out;
}

LabeledDataset without_ids(const LabeledDataset& data, const std::vector<std::int64_t>& ids) {
  LabeledDataset out;
  out.feature_dim = data.feature_dim;
  out.num_classes = data.num_classes;
  out.box_low = data.box_low;
  out.box_high = data.box_high;
  out.examples.reserve(data.size());
  for (const Example& ex : data.examples)
    if (std::find(ids.begin(), ids.end(), ex.id) == ids.end()) out.examples.push_back(ex);
  return out;
}

double accuracy(const Model& m, const LabeledDataset& data) {
  if (data.examples.empty()) throw std::invalid_argument("accuracy: empty dataset");
  std::size_t correct = 0;
  for (const Example& ex : data.examples)
    if (predicted_label(m, ex.x) == ex.y) ++correct;
  return double(correct) / double(data.size());
}

double adv_accuracy(const Model& m, const LabeledDataset& data,
                    const PerturbationConstraint& c, const AttackConfig& cfg, RngStream& rng) {
  if (data.examples.empty()) throw std::invalid_argument("adv_accuracy: empty dataset");
  const std::size_t chunk = 128;
  std::size_t correct = 0;
  for (std::size_t start = 0; start < data.size(); start += chunk) {
    const std::size_t n = std::min(chunk, data.size() - start);
    Mat xs(data.feature_dim, static_cast<Eigen::Index>(n));
    std::vector<int> ys(n);
    for (std::size_t i = 0; i < n; ++i) {
      xs.col(static_cast<Eigen::Index>(i)) = data.examples[start + i].x;
      ys[i] = data.examples[start + i].y;
    }
    Mat adv = pgd_untargeted_batch(m, xs, ys, c, cfg, rng);
    for (std::size_t i = 0; i < n; ++i)
      if (predicted_label(m, adv.col(static_cast<Eigen::Index>(i))) == ys[i]) ++correct;
  }
  return double(correct) / double(data.size());
}

}  // namespace robustleak
