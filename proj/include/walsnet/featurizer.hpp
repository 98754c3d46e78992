// Text featurization: byte encoding, byte n-gram expansion, hashed character
// n-grams, and embedding tables mapping token sequences to vector sequences.
#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <string>
#include <string_view>
#include <vector>

#include "walsnet/common.hpp"
#include "walsnet/tensor.hpp"

namespace walsnet {

// Byte vocabulary: raw byte values 0..255 plus two specials.
inline constexpr std::size_t kByteVocab = 258;
inline constexpr std::size_t kEos = 256;
inline constexpr std::size_t kPad = 257;

inline constexpr std::size_t kHashBuckets = std::size_t{1} << 14;

enum class EmbeddingMode { ByteUnigram, ByteNgram, CharNgramHash };

inline const char* to_string(EmbeddingMode m) {
  switch (m) {
    case EmbeddingMode::ByteUnigram: return "byte_unigram";
    case EmbeddingMode::ByteNgram: return "byte_ngram";
    case EmbeddingMode::CharNgramHash: return "char_ngram_hash";
  }
  return "byte_unigram";
}

inline std::optional<EmbeddingMode> embedding_mode_from_string(std::string_view s) {
  if (s == "byte_unigram") return EmbeddingMode::ByteUnigram;
  if (s == "byte_ngram") return EmbeddingMode::ByteNgram;
  if (s == "char_ngram_hash") return EmbeddingMode::CharNgramHash;
  return std::nullopt;
}

inline std::size_t embedding_rows(EmbeddingMode m) {
  return m == EmbeddingMode::CharNgramHash ? kHashBuckets : kByteVocab;
}

inline std::size_t embedding_dim(EmbeddingMode m) {
  switch (m) {
    case EmbeddingMode::ByteUnigram: return 8;
    case EmbeddingMode::ByteNgram: return 32;
    case EmbeddingMode::CharNgramHash: return 256;
  }
  return 8;
}

// UTF-8 bytes of the text followed by one EOS id.
inline std::vector<std::size_t> encode_bytes(std::string_view text) {
  std::vector<std::size_t> ids;
  ids.reserve(text.size() + 1);
  for (unsigned char b : text) ids.push_back(b);
  ids.push_back(kEos);
  return ids;
}

// One timestep of model input: the vocabulary ids whose embedding rows are
// averaged to produce the step's vector.
struct NgramToken {
  std::vector<std::size_t> ids;
};

using TokenSeq = std::vector<NgramToken>;

// Number of content windows for T positions at max order n: sum over start
// positions of min(n, T-i+1), which is nT - n(n-1)/2 once T >= n. The
// terminal EOS unigram is appended separately and not counted here.
inline std::size_t ngram_expansion_length(std::size_t content_len, std::size_t n) {
  if (n < 1) throw ConfigError("n-gram order must be >= 1");
  std::size_t total = 0;
  for (std::size_t i = 0; i < content_len; ++i) total += std::min(n, content_len - i);
  return total;
}

// Expands content byte ids into overlapping windows of orders 1..n, ordered
// by start position, then by order within a position. Windows never cross
// the sequence end.
inline TokenSeq expand_ngrams(const std::vector<std::size_t>& content_ids, std::size_t n) {
  if (n < 1) throw ConfigError("n-gram order must be >= 1");
  const std::size_t T = content_ids.size();
  TokenSeq seq;
  seq.reserve(ngram_expansion_length(T, n));
  for (std::size_t i = 0; i < T; ++i) {
    const std::size_t widest = std::min(n, T - i);
    for (std::size_t k = 1; k <= widest; ++k) {
      NgramToken tok;
      tok.ids.assign(content_ids.begin() + i, content_ids.begin() + i + k);
      seq.push_back(std::move(tok));
    }
  }
  return seq;
}

inline TokenSeq expand_ngrams(std::string_view text, std::size_t n) {
  std::vector<std::size_t> ids;
  ids.reserve(text.size());
  for (unsigned char b : text) ids.push_back(b);
  return expand_ngrams(ids, n);
}

namespace detail {

// UTF-8 characters of `text` as (offset, length) slices.
inline std::vector<std::pair<std::size_t, std::size_t>> utf8_char_spans(std::string_view text) {
  if (!utf8_char_count(text, nullptr)) throw ParseError("text is not valid UTF-8");
  std::vector<std::pair<std::size_t, std::size_t>> spans;
  std::size_t i = 0;
  while (i < text.size()) {
    unsigned char b = static_cast<unsigned char>(text[i]);
    std::size_t len = b < 0x80 ? 1 : (b >> 5) == 0x6 ? 2 : (b >> 4) == 0xe ? 3 : 4;
    spans.emplace_back(i, len);
    i += len;
  }
  return spans;
}

}  // namespace detail

// Character windows of orders 1..n (same enumeration as expand_ngrams, over
// Unicode characters), each hashed with 64-bit FNV-1a of its UTF-8 bytes
// into one of 2^14 buckets. No EOS token: the bucket table has no EOS row.
inline TokenSeq char_ngrams_hashed(std::string_view text, std::size_t n = 5) {
  if (n < 1) throw ConfigError("n-gram order must be >= 1");
  auto spans = detail::utf8_char_spans(text);
  const std::size_t T = spans.size();
  TokenSeq seq;
  seq.reserve(ngram_expansion_length(T, n));
  for (std::size_t i = 0; i < T; ++i) {
    const std::size_t widest = std::min(n, T - i);
    for (std::size_t k = 1; k <= widest; ++k) {
      const std::size_t begin = spans[i].first;
      const std::size_t end = spans[i + k - 1].first + spans[i + k - 1].second;
      std::uint64_t h = fnv1a64(text.substr(begin, end - begin));
      seq.push_back(NgramToken{{static_cast<std::size_t>(h % kHashBuckets)}});
    }
  }
  return seq;
}

// Full model input for a text under the given mode. Byte modes append the
// terminal EOS unigram after the content windows; the hashed character mode
// has no EOS row and emits content windows only.
inline TokenSeq featurize(std::string_view text, EmbeddingMode mode, std::size_t ngram_order = 7,
                          std::size_t char_order = 5) {
  switch (mode) {
    case EmbeddingMode::ByteUnigram: {
      TokenSeq seq;
      seq.reserve(text.size() + 1);
      for (unsigned char b : text) seq.push_back(NgramToken{{static_cast<std::size_t>(b)}});
      seq.push_back(NgramToken{{kEos}});
      return seq;
    }
    case EmbeddingMode::ByteNgram: {
      TokenSeq seq = expand_ngrams(text, ngram_order);
      seq.push_back(NgramToken{{kEos}});
      return seq;
    }
    case EmbeddingMode::CharNgramHash: return char_ngrams_hashed(text, char_order);
  }
  return {};
}

// Rows ~ Normal(0, 1/sqrt(d)).
template <class Real>
Tensor<Real> init_embedding(EmbeddingMode mode, std::uint64_t seed) {
  const std::size_t rows = embedding_rows(mode);
  const std::size_t dim = embedding_dim(mode);
  Tensor<Real> table({rows, dim});
  auto rng = make_rng(seed, "embedding");
  std::normal_distribution<double> dist(0.0, 1.0 / std::sqrt(static_cast<double>(dim)));
  for (auto& v : table.data) v = static_cast<Real>(dist(rng));
  return table;
}

// Token vector = mean of its id rows.
template <class Real>
void embed_token(const Tensor<Real>& table, const NgramToken& tok, Real* out) {
  const std::size_t d = table.shape[1];
  for (std::size_t j = 0; j < d; ++j) out[j] = Real(0);
  for (std::size_t id : tok.ids) {
    const Real* row = table.row(id);
    for (std::size_t j = 0; j < d; ++j) out[j] += row[j];
  }
  const Real inv = Real(1) / static_cast<Real>(tok.ids.size());
  for (std::size_t j = 0; j < d; ++j) out[j] *= inv;
}

// [T, d] matrix of embedded tokens.
template <class Real>
Tensor<Real> embed_sequence(const Tensor<Real>& table, const TokenSeq& seq) {
  const std::size_t d = table.shape[1];
  Tensor<Real> out({seq.size(), d});
  for (std::size_t t = 0; t < seq.size(); ++t) embed_token(table, seq[t], out.row(t));
  return out;
}

// Accumulates d_out rows back into d_table at each token's ids, scaled by
// the token's 1/k averaging factor.
template <class Real>
void embed_sequence_backward(const TokenSeq& seq, const Tensor<Real>& d_out,
                             Tensor<Real>& d_table) {
  const std::size_t d = d_table.shape[1];
  for (std::size_t t = 0; t < seq.size(); ++t) {
    const Real inv = Real(1) / static_cast<Real>(seq[t].ids.size());
    const Real* g = d_out.row(t);
    for (std::size_t id : seq[t].ids) {
      Real* row = d_table.row(id);
      for (std::size_t j = 0; j < d; ++j) row[j] += inv * g[j];
    }
  }
}

}  // namespace walsnet
