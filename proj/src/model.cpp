#include "robustleak/model.hpp"

#include <cmath>
#include <fstream>
#include <stdexcept>

#include <json.hpp>

namespace robustleak {

Gradients Gradients::zeros_like(const Model& m) {
  Gradients g;
  g.layers.reserve(m.layers.size());
  for (const Layer& l : m.layers) {
    g.layers.push_back({Mat::Zero(l.w.rows(), l.w.cols()), Vec::Zero(l.b.size())});
  }
  return g;
}

Gradients& Gradients::add_scaled(const Gradients& other, double scale) {
  for (std::size_t i = 0; i < layers.size(); ++i) {
    layers[i].w += scale * other.layers[i].w;
    layers[i].b += scale * other.layers[i].b;
  }
  return *this;
}

void Gradients::scale(double s) {
  for (Layer& l : layers) {
    l.w *= s;
    l.b *= s;
  }
}

double Gradients::squared_norm() const {
  double n = 0.0;
  for (const Layer& l : layers) n += l.w.squaredNorm() + l.b.squaredNorm();
  return n;
}

Model make_mlp(const std::vector<int>& dims, RngStream& rng) {
  if (dims.size() < 2) throw std::invalid_argument("make_mlp: need at least input and output dims");
  for (int d : dims) {
    if (d <= 0) throw std::invalid_argument("make_mlp: dims must be positive");
  }
  Model m;
  for (std::size_t l = 0; l + 1 < dims.size(); ++l) {
    const int fan_in = dims[l];
    const int fan_out = dims[l + 1];
    const double a = std::sqrt(6.0 / (fan_in + fan_out));
    Layer layer{Mat(fan_out, fan_in), Vec::Zero(fan_out)};
    for (int i = 0; i < fan_out; ++i) {
      for (int j = 0; j < fan_in; ++j) layer.w(i, j) = rng.uniform(-a, a);
    }
    m.layers.push_back(std::move(layer));
  }
  return m;
}

Vec logits(const Model& m, const Vec& x) {
  if (x.size() != m.input_dim()) throw std::invalid_argument("logits: input dimension mismatch");
  // One-column matrices keep every forward pass on the same product kernel,
  // so single-example and batched evaluations agree bit for bit.
  Mat a(x.size(), 1);
  a.col(0) = x;
  for (std::size_t l = 0; l < m.layers.size(); ++l) {
    a = ((m.layers[l].w * a).colwise() + m.layers[l].b).eval();
    if (l + 1 < m.layers.size()) a = a.cwiseMax(0.0);
  }
  return a.col(0);
}

Vec softmax(const Vec& z) {
  if (!z.allFinite()) throw std::runtime_error("softmax: non-finite logits");
  const double zmax = z.maxCoeff();
  Vec e = (z.array() - zmax).exp();
  return e / e.sum();
}

Vec predict(const Model& m, const Vec& x) { return softmax(logits(m, x)); }

int argmax(const Vec& v) {
  Eigen::Index idx = 0;
  v.maxCoeff(&idx);
  return static_cast<int>(idx);
}

int predicted_label(const Model& m, const Vec& x) { return argmax(logits(m, x)); }

void save_model(const Model& m, const std::string& path) {
  nlohmann::ordered_json j;
  j["input_dim"] = m.input_dim();
  j["num_classes"] = m.num_classes();
  j["layers"] = nlohmann::ordered_json::array();
  for (const Layer& l : m.layers) {
    nlohmann::ordered_json jl;
    auto rows = nlohmann::ordered_json::array();
    for (Eigen::Index i = 0; i < l.w.rows(); ++i) {
      auto row = nlohmann::ordered_json::array();
      for (Eigen::Index jcol = 0; jcol < l.w.cols(); ++jcol) row.push_back(l.w(i, jcol));
      rows.push_back(std::move(row));
    }
    jl["w"] = std::move(rows);
    auto bias = nlohmann::ordered_json::array();
    for (Eigen::Index i = 0; i < l.b.size(); ++i) bias.push_back(l.b[i]);
    jl["b"] = std::move(bias);
    j["layers"].push_back(std::move(jl));
  }
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("save_model: cannot open " + path);
  out << j.dump(2) << '\n';
}

Model load_model(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("load_model: cannot open " + path);
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw std::runtime_error("load_model: " + path + ": " + e.what());
  }
  Model m;
  for (const auto& jl : j.at("layers")) {
    const auto& rows = jl.at("w");
    const auto& bias = jl.at("b");
    if (rows.empty()) throw std::runtime_error("load_model: empty weight matrix");
    Layer l{Mat(rows.size(), rows[0].size()), Vec(bias.size())};
    for (std::size_t i = 0; i < rows.size(); ++i) {
      if (rows[i].size() != static_cast<std::size_t>(l.w.cols())) {
        throw std::runtime_error("load_model: ragged weight matrix");
      }
      for (std::size_t jcol = 0; jcol < rows[i].size(); ++jcol) {
        l.w(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(jcol)) = rows[i][jcol].get<double>();
      }
    }
    for (std::size_t i = 0; i < bias.size(); ++i) l.b[static_cast<Eigen::Index>(i)] = bias[i].get<double>();
    if (l.w.rows() != l.b.size()) throw std::runtime_error("load_model: bias length mismatch");
    m.layers.push_back(std::move(l));
  }
  if (m.layers.empty()) throw std::runtime_error("load_model: no layers");
  for (std::size_t l = 0; l + 1 < m.layers.size(); ++l) {
    if (m.layers[l].w.rows() != m.layers[l + 1].w.cols()) {
      throw std::runtime_error("load_model: layer shape chain mismatch");
    }
  }
  if (j.at("input_dim").get<int>() != m.input_dim() ||
      j.at("num_classes").get<int>() != m.num_classes()) {
    throw std::runtime_error("load_model: declared dims disagree with layer shapes");
  }
  return m;
}

}  // namespace robustleak
