#include <cstring>
#include <fstream>
#include <sstream>

#include "pd/model.hpp"

namespace pd {

namespace {

constexpr const char* kMagic = "PDCHKPT 1";

struct TensorDecl {
  std::string name;
  long rows = 0, cols = 0;
};

void write_f32_le(std::ofstream& out, const MatX<float>& m) {
  // Row-major storage is written as-is; the header records the shape.
  static_assert(sizeof(float) == 4);
  out.write(reinterpret_cast<const char*>(m.data()),
            std::streamsize(sizeof(float) * size_t(m.size())));
}

void read_f32_le(std::istream& in, MatX<float>& m) {
  in.read(reinterpret_cast<char*>(m.data()),
          std::streamsize(sizeof(float) * size_t(m.size())));
  if (!in) throw IoError("checkpoint truncated while reading tensor data");
}

}  // namespace

void save_checkpoint(const std::string& path, const ParamsT<float>& params,
                     const Vocabulary& vocab, uint64_t seed, int64_t step,
                     const OptimizerState* opt) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open checkpoint for write: " + path);
  const ModelConfig& cfg = params.cfg;
  out << kMagic << "\n";
  out << "config vocab_size=" << cfg.vocab_size << " d_model=" << cfg.d_model
      << " n_layers=" << cfg.n_layers << " n_heads=" << cfg.n_heads
      << " d_ff=" << cfg.d_ff << " max_seq_len=" << cfg.max_seq_len
      << " rotary=" << (cfg.rotary ? 1 : 0) << "\n";
  out << "dtype f32le\n";
  out << "seed " << seed << "\n";
  out << "step " << step << "\n";
  auto words = vocab.content_words();
  out << "vocab " << words.size() << "\n";
  for (const auto& w : words) out << w << "\n";
  params.for_each([&](const std::string& name, const MatX<float>& m) {
    out << "tensor " << name << " " << m.rows() << " " << m.cols() << "\n";
  });
  if (opt) {
    out << "opt_step " << opt->step << "\n";
    opt->m.for_each([&](const std::string& name, const MatX<float>& m) {
      out << "tensor opt.m." << name << " " << m.rows() << " " << m.cols()
          << "\n";
    });
    opt->v.for_each([&](const std::string& name, const MatX<float>& m) {
      out << "tensor opt.v." << name << " " << m.rows() << " " << m.cols()
          << "\n";
    });
  }
  out << "end_header\n";
  params.for_each([&](const std::string&, const MatX<float>& m) {
    write_f32_le(out, m);
  });
  if (opt) {
    opt->m.for_each([&](const std::string&, const MatX<float>& m) {
      write_f32_le(out, m);
    });
    opt->v.for_each([&](const std::string&, const MatX<float>& m) {
      write_f32_le(out, m);
    });
  }
  if (!out) throw IoError("checkpoint write failed: " + path);
}

Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open checkpoint: " + path);
  std::string line;
  if (!std::getline(in, line) || line != kMagic)
    throw IoError("bad checkpoint magic in " + path);

  Checkpoint ck;
  std::vector<TensorDecl> decls;
  int vocab_count = -1;
  bool have_config = false;
  while (std::getline(in, line)) {
    if (line == "end_header") break;
    std::istringstream ss(line);
    std::string key;
    ss >> key;
    if (key == "config") {
      std::string kv;
      while (ss >> kv) {
        auto eq = kv.find('=');
        if (eq == std::string::npos) continue;
        std::string k = kv.substr(0, eq);
        long v = std::stol(kv.substr(eq + 1));
        if (k == "vocab_size") ck.cfg.vocab_size = int(v);
        else if (k == "d_model") ck.cfg.d_model = int(v);
        else if (k == "n_layers") ck.cfg.n_layers = int(v);
        else if (k == "n_heads") ck.cfg.n_heads = int(v);
        else if (k == "d_ff") ck.cfg.d_ff = int(v);
        else if (k == "max_seq_len") ck.cfg.max_seq_len = int(v);
        else if (k == "rotary") ck.cfg.rotary = v != 0;
      }
      have_config = true;
    } else if (key == "dtype") {
      std::string d;
      ss >> d;
      if (d != "f32le") throw IoError("unsupported checkpoint dtype: " + d);
    } else if (key == "seed") {
      ss >> ck.seed;
    } else if (key == "step") {
      ss >> ck.step;
    } else if (key == "opt_step") {
      ck.has_opt = true;
      ss >> ck.opt.step;
    } else if (key == "vocab") {
      ss >> vocab_count;
      for (int i = 0; i < vocab_count; ++i) {
        if (!std::getline(in, line)) throw IoError("truncated vocab section");
        ck.vocab.add_word(line);
      }
    } else if (key == "tensor") {
      TensorDecl d;
      ss >> d.name >> d.rows >> d.cols;
      decls.push_back(d);
    }
  }
  if (!have_config) throw IoError("checkpoint missing config line");
  ck.cfg.check();
  if (ck.vocab.size() != ck.cfg.vocab_size)
    throw IoError("checkpoint vocab size " + std::to_string(ck.vocab.size()) +
                  " does not match config vocab_size " +
                  std::to_string(ck.cfg.vocab_size));

  // Allocate parameter tensors and read them in header order.
  Rng dummy(0);
  ck.params = init_params(ck.cfg, dummy);
  if (ck.has_opt) {
    int64_t opt_step = ck.opt.step;
    ck.opt = OptimizerState::init(ck.params);
    ck.opt.step = opt_step;
  }

  std::vector<std::pair<std::string, MatX<float>*>> slots;
  ck.params.for_each([&](const std::string& name, MatX<float>& m) {
    slots.emplace_back(name, &m);
  });
  if (ck.has_opt) {
    ck.opt.m.for_each([&](const std::string& name, MatX<float>& m) {
      slots.emplace_back("opt.m." + name, &m);
    });
    ck.opt.v.for_each([&](const std::string& name, MatX<float>& m) {
      slots.emplace_back("opt.v." + name, &m);
    });
  }
  if (slots.size() != decls.size())
    throw IoError("checkpoint tensor count mismatch: header " +
                  std::to_string(decls.size()) + ", expected " +
                  std::to_string(slots.size()));
  for (size_t i = 0; i < decls.size(); ++i) {
    if (decls[i].name != slots[i].first)
      throw IoError("checkpoint tensor order mismatch at " + decls[i].name);
    MatX<float>& m = *slots[i].second;
    if (decls[i].rows != m.rows() || decls[i].cols != m.cols())
      throw IoError("checkpoint shape mismatch for " + decls[i].name);
    read_f32_le(in, m);
  }
  return ck;
}

}  // namespace pd
