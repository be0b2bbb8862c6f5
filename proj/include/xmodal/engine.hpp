#pragma once

#include <cstddef>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "xmodal/catalog.hpp"
#include "xmodal/encoder.hpp"
#include "xmodal/error.hpp"
#include "xmodal/manifest.hpp"
#include "xmodal/scoring.hpp"

namespace xmodal {

enum class Direction { text_to_image, image_to_text };

inline std::string_view to_string(Direction d) {
  return d == Direction::text_to_image ? "text-to-image" : "image-to-text";
}

/// A search request. Exactly one of text / image_bytes / precomputed is set.
struct Query {
  Modality modality = Modality::text;
  std::optional<std::string> text;
  std::optional<std::vector<std::byte>> image_bytes;
  std::optional<QueryEmbedding> precomputed;
  std::size_t k = 10;

  static Query from_text(std::string text, std::size_t k = 10) {
    Query q;
    q.modality = Modality::text;
    q.text = std::move(text);
    q.k = k;
    return q;
  }

  static Query from_image(std::vector<std::byte> bytes, std::size_t k = 10) {
    Query q;
    q.modality = Modality::image;
    q.image_bytes = std::move(bytes);
    q.k = k;
    return q;
  }

  static Query from_embedding(QueryEmbedding e, std::size_t k = 10) {
    Query q;
    q.modality = e.modality;
    q.precomputed = std::move(e);
    q.k = k;
    return q;
  }

  void validate() const {
    int present = int(text.has_value()) + int(image_bytes.has_value()) + int(precomputed.has_value());
    if (present != 1) throw QueryError("exactly one of text, image bytes or embedding must be given");
    if (text && text->empty()) throw QueryError("text query is empty");
    if (text && modality != Modality::text) throw QueryError("text payload on an image query");
    if (image_bytes && modality != Modality::image) throw QueryError("image payload on a text query");
    if (k == 0) throw QueryError("k must be at least 1");
  }
};

struct RankedResult {
  std::size_t rank = 0;  // 1-based
  ScoreBreakdown breakdown;
  CatalogEntry entry;
};

/// End-to-end retrieval over an immutable corpus. Text queries are ranked
/// against the image-side stores, image queries against the description-side
/// stores; catalog entry i carries both description i and its image.
/// Safe for concurrent use.
class Engine {
 public:
  Engine(std::shared_ptr<const Corpus> corpus, FusionConfig fusion,
         std::shared_ptr<const EncoderAdapter> adapter = nullptr, ScoringOptions options = {})
      : corpus_(std::move(corpus)),
        fusion_(fusion),
        adapter_(std::move(adapter)),
        options_(options),
        images_(corpus_->images),
        descriptions_(corpus_->descriptions) {
    fusion_.validate();
    corpus_->validate();
    if (adapter_ && (adapter_->global_dim() != corpus_->global_dim() ||
                     adapter_->local_dim() != corpus_->local_dim()))
      throw ScoringError("encoder dims (" + std::to_string(adapter_->global_dim()) + ", " +
                         std::to_string(adapter_->local_dim()) + ") differ from corpus dims (" +
                         std::to_string(corpus_->global_dim()) + ", " +
                         std::to_string(corpus_->local_dim()) + ")");
  }

  const Corpus& corpus() const { return *corpus_; }
  const FusionConfig& fusion() const { return fusion_; }
  const EncoderAdapter* adapter() const { return adapter_.get(); }
  const ScoringOptions& options() const { return options_; }

  const PreparedSide& gallery(Direction d) const {
    return d == Direction::text_to_image ? images_ : descriptions_;
  }

  std::vector<RankedResult> text_to_image(const Query& query) const {
    query.validate();
    if (query.modality != Modality::text) throw QueryError("text_to_image needs a text query");
    return run(query, Direction::text_to_image);
  }

  std::vector<RankedResult> image_to_text(const Query& query) const {
    query.validate();
    if (query.modality != Modality::image) throw QueryError("image_to_text needs an image query");
    return run(query, Direction::image_to_text);
  }

  std::vector<RankedResult> search(const Query& query) const {
    return query.modality == Modality::text ? text_to_image(query) : image_to_text(query);
  }

  /// Scoring and ranking only, for callers holding an embedding already.
  std::vector<ScoreBreakdown> rank(const QueryEmbedding& embedding, Direction d,
                                   std::size_t k) const {
    return score_query_against_corpus(embedding, gallery(d), fusion_, k, options_);
  }

  std::vector<RankedResult> assemble(const std::vector<ScoreBreakdown>& ranked) const {
    std::vector<RankedResult> out;
    out.reserve(ranked.size());
    for (std::size_t i = 0; i < ranked.size(); ++i)
      out.push_back({i + 1, ranked[i], corpus_->catalog.at(ranked[i].item_id)});
    return out;
  }

 private:
  QueryEmbedding encode(const Query& query) const {
    if (query.precomputed) return *query.precomputed;
    if (!adapter_) throw EncoderError(EncoderErrc::invalid_input, "no encoder configured");
    if (query.text) return adapter_->encode_text(*query.text);
    auto& bytes = *query.image_bytes;
    return adapter_->encode_image(bytes);
  }

  std::vector<RankedResult> run(const Query& query, Direction d) const {
    auto embedding = encode(query);
    embedding.validate();
    return assemble(rank(embedding, d, query.k));
  }

  std::shared_ptr<const Corpus> corpus_;
  FusionConfig fusion_;
  std::shared_ptr<const EncoderAdapter> adapter_;
  ScoringOptions options_;
  PreparedSide images_;
  PreparedSide descriptions_;
};

}  // namespace xmodal
