/*
 * Copyright 2026 The srvae Authors
 *
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 *     http://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 */

#include "srvae/serialize.hpp"

#include <charconv>
#include <fstream>
#include <sstream>

#include "srvae/trace.hpp"

namespace srvae {

Json matrix_to_json(const Matrix& m) {
  Json rows = Json::array();
  for (Index i = 0; i < m.rows(); ++i) {
    Json row = Json::array();
    for (Index j = 0; j < m.cols(); ++j) row.push_back(m(i, j));
    rows.push_back(std::move(row));
  }
  return rows;
}

Matrix matrix_from_json(const Json& j) {
  if (j.is_number()) return Matrix::Constant(1, 1, j.get<double>());
  require(j.is_array(), ErrorCode::kConfig, "matrix: expected a list");
  if (j.empty()) return Matrix(0, 0);
  if (j.front().is_number()) {
    Matrix m(static_cast<Index>(j.size()), 1);
    for (std::size_t i = 0; i < j.size(); ++i) {
      require(j[i].is_number(), ErrorCode::kConfig, "matrix: non-numeric entry");
      m(static_cast<Index>(i), 0) = j[i].get<double>();
    }
    return m;
  }
  const std::size_t cols = j.front().size();
  Matrix m(static_cast<Index>(j.size()), static_cast<Index>(cols));
  for (std::size_t i = 0; i < j.size(); ++i) {
    require(j[i].is_array() && j[i].size() == cols, ErrorCode::kConfig,
            "matrix: ragged rows");
    for (std::size_t c = 0; c < cols; ++c) {
      require(j[i][c].is_number(), ErrorCode::kConfig, "matrix: non-numeric entry");
      m(static_cast<Index>(i), static_cast<Index>(c)) = j[i][c].get<double>();
    }
  }
  return m;
}

Json parameter_to_json(const Parameter& p) {
  return Json{{"value", matrix_to_json(p.value)},
              {"m", matrix_to_json(p.first_moment)},
              {"v", matrix_to_json(p.second_moment)},
              {"step", p.step},
              {"trainable", p.trainable}};
}

void parameter_from_json(const Json& j, Parameter& p) {
  const Matrix value = matrix_from_json(j.at("value"));
  require(value.rows() == p.value.rows() && value.cols() == p.value.cols(),
          ErrorCode::kShapeMismatch, "parameter '" + p.name + "': stored shape differs");
  p.value = value;
  p.grad = Matrix::Zero(value.rows(), value.cols());
  p.first_moment = j.contains("m") ? matrix_from_json(j["m"]) : Matrix::Zero(value.rows(), value.cols());
  p.second_moment = j.contains("v") ? matrix_from_json(j["v"]) : Matrix::Zero(value.rows(), value.cols());
  if (p.first_moment.size() != value.size()) p.first_moment = Matrix::Zero(value.rows(), value.cols());
  if (p.second_moment.size() != value.size()) p.second_moment = Matrix::Zero(value.rows(), value.cols());
  p.step = j.value("step", 0L);
  p.trainable = j.value("trainable", true);
}

Json mlp_to_json(const Mlp& net) {
  Json layers = Json::array();
  for (std::size_t l = 0; l < net.depth(); ++l)
    layers.push_back({{"weight", parameter_to_json(net.weight(l))},
                      {"bias", parameter_to_json(net.bias(l))}});
  return {{"output", activation_name(net.output_activation())}, {"layers", layers}};
}

Mlp mlp_from_json(const std::string& name, const Json& j) {
  std::vector<Matrix> weights, biases;
  for (const Json& layer : j.at("layers")) {
    weights.push_back(matrix_from_json(layer.at("weight").at("value")));
    biases.push_back(matrix_from_json(layer.at("bias").at("value")));
  }
  Mlp net(name, weights, biases, activation_from_string(j.at("output").get<std::string>()));
  std::size_t l = 0;
  for (const Json& layer : j.at("layers")) {
    parameter_from_json(layer.at("weight"), net.weight(l));
    parameter_from_json(layer.at("bias"), net.bias(l));
    ++l;
  }
  return net;
}

std::string read_text_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorCode::kIo, "cannot read '" + path + "'");
  std::ostringstream os;
  os << in.rdbuf();
  return os.str();
}

void write_text_file(const std::string& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) fail(ErrorCode::kIo, "cannot write '" + path + "'");
  out << text;
  if (!out) fail(ErrorCode::kIo, "write failed for '" + path + "'");
}

Json read_json_file(const std::string& path) {
  const std::string text = read_text_file(path);
  try {
    return Json::parse(text);
  } catch (const Json::parse_error& e) {
    fail(ErrorCode::kConfig, "'" + path + "' is not valid JSON: " + e.what());
  }
}

void write_json_file(const std::string& path, const Json& j) {
  write_text_file(path, j.dump(2) + "\n");
}

std::string format_double(double v) {
  char buf[64];
  auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, res.ptr);
}

void write_csv(const std::string& path, const std::vector<std::string>& header,
               const std::vector<std::vector<double>>& rows) {
  std::ostringstream os;
  for (std::size_t i = 0; i < header.size(); ++i) os << (i ? "," : "") << header[i];
  os << "\n";
  for (const auto& row : rows) {
    require(row.size() == header.size(), ErrorCode::kShapeMismatch, "csv row width");
    for (std::size_t i = 0; i < row.size(); ++i) os << (i ? "," : "") << format_double(row[i]);
    os << "\n";
  }
  write_text_file(path, os.str());
}

std::vector<std::vector<double>> read_csv(const std::string& path,
                                          std::vector<std::string>* header) {
  std::istringstream in(read_text_file(path));
  std::string line;
  std::vector<std::vector<double>> rows;
  if (!std::getline(in, line)) fail(ErrorCode::kConfig, "'" + path + "' is empty");
  if (header) {
    header->clear();
    std::istringstream hs(line);
    std::string cell;
    while (std::getline(hs, cell, ',')) header->push_back(cell);
  }
  std::size_t width = 0;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::vector<double> row;
    std::istringstream ls(line);
    std::string cell;
    while (std::getline(ls, cell, ',')) {
      double v = 0.0;
      const auto res = std::from_chars(cell.data(), cell.data() + cell.size(), v);
      if (res.ec != std::errc())
        fail(ErrorCode::kConfig, "'" + path + "': non-numeric cell '" + cell + "'");
      row.push_back(v);
    }
    if (rows.empty()) width = row.size();
    require(row.size() == width, ErrorCode::kConfig, "'" + path + "': ragged rows");
    rows.push_back(std::move(row));
  }
  return rows;
}

void MetricTrace::write_csv(const std::string& path) const {
  std::vector<std::vector<double>> rows;
  for (std::size_t e = 0; e < size(); ++e)
    rows.push_back({static_cast<double>(e + 1), free_energy[e], recon[e], kl[e], seconds[e]});
  srvae::write_csv(path, {"epoch", "free_energy", "recon", "kl", "seconds"}, rows);
}

}  // namespace srvae
