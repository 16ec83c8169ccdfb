// SPDX-FileCopyrightText: Copyright (c) 2026 The blockpg Authors
// SPDX-License-Identifier: Apache-2.0

// Checkpoint layout (all integers in decimal ASCII, payload little-endian):
//
//   BLOCKPG-CHECKPOINT 1\n
//   model <n>\n<n bytes of model config text>
//   extra <n>\n<n bytes of free text>
//   tensors <count>\n
//   repeated: <name> <rank> <rows> <cols>\n<rows*cols float64 values>

#include <bit>
#include <cstring>
#include <fstream>
#include <sstream>

#include "blockpg/error.hpp"
#include "blockpg/model.hpp"

namespace blockpg::model {

namespace {

constexpr const char* kMagic = "BLOCKPG-CHECKPOINT 1";

static_assert(std::endian::native == std::endian::little, "checkpoint payload assumes little-endian");

void write_blob(std::ostream& os, const char* tag, const std::string& text) {
  os << tag << ' ' << text.size() << '\n';
  os.write(text.data(), static_cast<std::streamsize>(text.size()));
}

std::string read_blob(std::istream& is, const char* tag, const std::string& path) {
  std::string line;
  if (!std::getline(is, line)) throw IoError(path + ": truncated checkpoint");
  std::istringstream ls(line);
  std::string got;
  std::size_t n = 0;
  if (!(ls >> got >> n) || got != tag) throw IoError(path + ": expected '" + std::string(tag) + "' section");
  std::string text(n, '\0');
  is.read(text.data(), static_cast<std::streamsize>(n));
  if (!is) throw IoError(path + ": truncated '" + std::string(tag) + "' section");
  return text;
}

}  // namespace

std::string serialize_model_config(const ModelConfig& c) {
  std::ostringstream os;
  os.precision(17);
  os << "vocab_size=" << c.vocab_size << '\n'
     << "d_model=" << c.d_model << '\n'
     << "context_layers=" << c.context_layers << '\n'
     << "ffn_width=" << c.ffn_width << '\n'
     << "K=" << c.K << '\n'
     << "value_mode=" << to_string(c.value_mode) << '\n'
     << "share_mtp_heads=" << (c.share_mtp_heads ? 1 : 0) << '\n'
     << "max_seq_len=" << c.max_seq_len << '\n'
     << "init_scale=" << c.init_scale << '\n';
  return os.str();
}

ModelConfig parse_model_config(const std::string& text) {
  ModelConfig c;
  std::istringstream is(text);
  std::string line;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw IoError("malformed model config line '" + line + "'");
    const std::string key = line.substr(0, eq), val = line.substr(eq + 1);
    if (key == "vocab_size") c.vocab_size = std::stoul(val);
    else if (key == "d_model") c.d_model = std::stoul(val);
    else if (key == "context_layers") c.context_layers = std::stoul(val);
    else if (key == "ffn_width") c.ffn_width = std::stoul(val);
    else if (key == "K") c.K = std::stoul(val);
    else if (key == "value_mode") c.value_mode = parse_value_mode(val);
    else if (key == "share_mtp_heads") c.share_mtp_heads = val == "1";
    else if (key == "max_seq_len") c.max_seq_len = std::stoul(val);
    else if (key == "init_scale") c.init_scale = std::stod(val);
    else throw IoError("unknown model config key '" + key + "'");
  }
  c.validate();
  return c;
}

void save_checkpoint(const std::string& path, const PolicyParameters& params,
                     const std::string& extra_text) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw IoError("cannot open '" + path + "' for writing");
  os << kMagic << '\n';
  write_blob(os, "model", serialize_model_config(params.config()));
  write_blob(os, "extra", extra_text);
  os << "tensors " << params.tensors().size() << '\n';
  for (const auto& [name, t] : params.tensors()) {
    os << name << ' ' << t.rank() << ' ' << t.rows() << ' ' << t.cols() << '\n';
    os.write(reinterpret_cast<const char*>(t.values().data()),
             static_cast<std::streamsize>(t.size() * sizeof(double)));
  }
  if (!os) throw IoError("write to '" + path + "' failed");
}

PolicyParameters load_checkpoint(const std::string& path, std::string* extra_text) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot open checkpoint '" + path + "'");
  std::string line;
  if (!std::getline(is, line) || line != kMagic) throw IoError(path + ": not a blockpg checkpoint");
  ModelConfig config = parse_model_config(read_blob(is, "model", path));
  std::string extra = read_blob(is, "extra", path);
  if (extra_text) *extra_text = std::move(extra);
  if (!std::getline(is, line)) throw IoError(path + ": missing tensor table");
  std::istringstream hs(line);
  std::string tag;
  std::size_t count = 0;
  if (!(hs >> tag >> count) || tag != "tensors") throw IoError(path + ": malformed tensor table");
  ad::Bindings tensors;
  for (std::size_t i = 0; i < count; ++i) {
    if (!std::getline(is, line)) throw IoError(path + ": truncated tensor header");
    std::istringstream ts(line);
    std::string name;
    std::size_t rank = 0, rows = 0, cols = 0;
    if (!(ts >> name >> rank >> rows >> cols) || (rank != 1 && rank != 2)) {
      throw IoError(path + ": malformed tensor header '" + line + "'");
    }
    ad::Tensor t = rank == 1 ? ad::Tensor(rows) : ad::Tensor(rows, cols);
    is.read(reinterpret_cast<char*>(t.values().data()),
            static_cast<std::streamsize>(t.size() * sizeof(double)));
    if (!is) throw IoError(path + ": truncated payload for '" + name + "'");
    tensors.emplace(std::move(name), std::move(t));
  }
  return PolicyParameters(std::move(config), std::move(tensors));
}

}  // namespace blockpg::model
