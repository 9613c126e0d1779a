#include "cosmo/clip_text.hpp"

#include <algorithm>
#include <cctype>

#include <nlohmann/json.hpp>

#include "cosmo/io.hpp"

namespace cosmo::encoders::clip {

namespace fs = std::filesystem;

BpeTokenizer::BpeTokenizer(std::map<std::string, int> vocab,
                           std::vector<std::pair<std::string, std::string>> merges)
    : vocab_(std::move(vocab)) {
  int rank = 0;
  for (auto& m : merges) {
    merge_rank_.emplace(std::move(m), rank++);
  }
}

namespace {

bool is_letter(char c) { return c >= 'a' && c <= 'z'; }
bool is_digit(char c) { return c >= '0' && c <= '9'; }

/// ASCII approximation of the reference word splitter: contractions, letter
/// runs, single digits, punctuation runs.
std::vector<std::string> split_words(const std::string& text) {
  std::string clean;
  clean.reserve(text.size());
  for (char c : text) {
    const char lc = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
    clean.push_back(lc == '_' ? ' ' : lc);
  }
  std::vector<std::string> words;
  std::size_t i = 0;
  const std::size_t n = clean.size();
  static const std::vector<std::string> contractions = {"'s", "'t", "'re", "'ve", "'m", "'ll", "'d"};
  while (i < n) {
    const char c = clean[i];
    if (std::isspace(static_cast<unsigned char>(c))) {
      ++i;
      continue;
    }
    if (c == '\'') {
      bool matched = false;
      for (const auto& apo : contractions) {
        if (clean.compare(i, apo.size(), apo) == 0) {
          words.push_back(apo);
          i += apo.size();
          matched = true;
          break;
        }
      }
      if (matched) {
        continue;
      }
    }
    if (is_letter(c)) {
      std::size_t j = i;
      while (j < n && is_letter(clean[j])) {
        ++j;
      }
      words.push_back(clean.substr(i, j - i));
      i = j;
      continue;
    }
    if (is_digit(c)) {
      words.push_back(clean.substr(i, 1));
      ++i;
      continue;
    }
    std::size_t j = i;
    while (j < n && !std::isspace(static_cast<unsigned char>(clean[j])) && !is_letter(clean[j]) &&
           !is_digit(clean[j])) {
      ++j;
    }
    words.push_back(clean.substr(i, j - i));
    i = j;
  }
  return words;
}

}  // namespace

std::vector<int> BpeTokenizer::tokenize_word(const std::string& word) const {
  std::vector<std::string> symbols;
  symbols.reserve(word.size());
  for (std::size_t i = 0; i < word.size(); ++i) {
    symbols.emplace_back(1, word[i]);
  }
  symbols.back() += "</w>";

  while (symbols.size() > 1) {
    int best_rank = -1;
    std::size_t best_pos = 0;
    for (std::size_t i = 0; i + 1 < symbols.size(); ++i) {
      auto it = merge_rank_.find({symbols[i], symbols[i + 1]});
      if (it != merge_rank_.end() && (best_rank < 0 || it->second < best_rank)) {
        best_rank = it->second;
        best_pos = i;
      }
    }
    if (best_rank < 0) {
      break;
    }
    symbols[best_pos] += symbols[best_pos + 1];
    symbols.erase(symbols.begin() + static_cast<std::ptrdiff_t>(best_pos) + 1);
  }

  std::vector<int> ids;
  ids.reserve(symbols.size());
  for (const auto& sym : symbols) {
    auto it = vocab_.find(sym);
    if (it == vocab_.end()) {
      throw ValidationError("token '" + sym + "' of word '" + word +
                            "' is not in the checkpoint vocabulary");
    }
    ids.push_back(it->second);
  }
  return ids;
}

std::vector<int> BpeTokenizer::tokenize(const std::string& text) const {
  std::vector<int> ids;
  for (const auto& word : split_words(text)) {
    const auto word_ids = tokenize_word(word);
    ids.insert(ids.end(), word_ids.begin(), word_ids.end());
  }
  return ids;
}

BpeTokenizer load_tokenizer(const fs::path& dir) {
  const auto vocab_json = nlohmann::json::parse(io::read_text(dir / "vocab.json"));
  std::map<std::string, int> vocab;
  for (const auto& [token, id] : vocab_json.at("tokens").items()) {
    vocab.emplace(token, id.get<int>());
  }

  std::vector<std::pair<std::string, std::string>> merges;
  std::istringstream merges_in(io::read_text(dir / "merges.txt"));
  std::string line;
  while (std::getline(merges_in, line)) {
    if (line.empty() || line.front() == '#') {
      continue;
    }
    const auto space = line.find(' ');
    if (space == std::string::npos) {
      throw IoError("malformed merge line '" + line + "' in " + (dir / "merges.txt").string());
    }
    merges.emplace_back(line.substr(0, space), line.substr(space + 1));
  }
  return BpeTokenizer(std::move(vocab), std::move(merges));
}

ClipMeta load_meta(const fs::path& dir) {
  if (!fs::exists(dir / "meta.json")) {
    throw IoError("not a converted checkpoint directory (missing meta.json): " + dir.string());
  }
  const auto j = nlohmann::json::parse(io::read_text(dir / "meta.json"));
  if (j.at("format_version").get<int>() != 1) {
    throw IoError("unsupported checkpoint format version in " + dir.string());
  }
  ClipMeta meta;
  meta.variant = j.at("variant").get<std::string>();
  meta.vocab_size = j.at("vocab_size").get<int>();
  meta.context_length = j.at("context_length").get<int>();
  meta.width = j.at("width").get<int>();
  meta.heads = j.at("heads").get<int>();
  meta.layers = j.at("layers").get<int>();
  meta.sot_token = j.at("sot_token").get<int>();
  meta.eot_token = j.at("eot_token").get<int>();
  // The output dimension is whatever the projection maps into, so read it
  // from the recorded tensor shape rather than trusting a separate field.
  const auto& proj_shape = j.at("tensors").at("text_projection");
  if (proj_shape.at(0).get<int>() != meta.width) {
    throw IoError("text_projection rows do not match the transformer width");
  }
  meta.feature_dim = proj_shape.at(1).get<int>();

  if (meta.vocab_size < 2 || meta.context_length < 3 || meta.width < 1 || meta.heads < 1 ||
      meta.layers < 1 || meta.feature_dim < 1) {
    throw IoError("checkpoint meta has non-positive dimensions");
  }
  if (meta.width % meta.heads != 0) {
    throw IoError("transformer width must be divisible by the head count");
  }
  if (meta.sot_token < 0 || meta.sot_token >= meta.vocab_size || meta.eot_token < 0 ||
      meta.eot_token >= meta.vocab_size) {
    throw IoError("start/end token ids fall outside the vocabulary");
  }
  return meta;
}

namespace {

template <class S>
MatrixX<S> load_tensor(const fs::path& dir, const std::string& name, Eigen::Index rows,
                       Eigen::Index cols) {
  const MatrixF m = io::read_f32_matrix(dir / "tensors" / (name + ".f32"), rows, cols);
  return m.template cast<S>();
}

template <class S>
VectorX<S> load_tensor_vec(const fs::path& dir, const std::string& name, Eigen::Index size) {
  const VectorF v = io::read_f32_vector(dir / "tensors" / (name + ".f32"), size);
  return v.template cast<S>();
}

}  // namespace

template <class S>
TransformerWeights<S> load_transformer_weights(const fs::path& dir, const ClipMeta& meta) {
  const Eigen::Index w = meta.width;
  TransformerWeights<S> out;
  out.token_embedding = load_tensor<S>(dir, "token_embedding.weight", meta.vocab_size, w);
  out.positional_embedding = load_tensor<S>(dir, "positional_embedding", meta.context_length, w);
  out.layers.resize(static_cast<std::size_t>(meta.layers));
  for (int l = 0; l < meta.layers; ++l) {
    const std::string p = "resblocks." + std::to_string(l) + ".";
    auto& lw = out.layers[static_cast<std::size_t>(l)];
    lw.ln1_weight = load_tensor_vec<S>(dir, p + "ln_1.weight", w);
    lw.ln1_bias = load_tensor_vec<S>(dir, p + "ln_1.bias", w);
    lw.attn_in_weight = load_tensor<S>(dir, p + "attn.in_proj_weight", 3 * w, w);
    lw.attn_in_bias = load_tensor_vec<S>(dir, p + "attn.in_proj_bias", 3 * w);
    lw.attn_out_weight = load_tensor<S>(dir, p + "attn.out_proj.weight", w, w);
    lw.attn_out_bias = load_tensor_vec<S>(dir, p + "attn.out_proj.bias", w);
    lw.ln2_weight = load_tensor_vec<S>(dir, p + "ln_2.weight", w);
    lw.ln2_bias = load_tensor_vec<S>(dir, p + "ln_2.bias", w);
    lw.fc1_weight = load_tensor<S>(dir, p + "mlp.c_fc.weight", 4 * w, w);
    lw.fc1_bias = load_tensor_vec<S>(dir, p + "mlp.c_fc.bias", 4 * w);
    lw.fc2_weight = load_tensor<S>(dir, p + "mlp.c_proj.weight", w, 4 * w);
    lw.fc2_bias = load_tensor_vec<S>(dir, p + "mlp.c_proj.bias", w);
  }
  out.ln_final_weight = load_tensor_vec<S>(dir, "ln_final.weight", w);
  out.ln_final_bias = load_tensor_vec<S>(dir, "ln_final.bias", w);
  out.text_projection = load_tensor<S>(dir, "text_projection", w, meta.feature_dim);
  return out;
}

template TransformerWeights<float> load_transformer_weights<float>(const fs::path&, const ClipMeta&);
template TransformerWeights<double> load_transformer_weights<double>(const fs::path&, const ClipMeta&);

}  // namespace cosmo::encoders::clip
