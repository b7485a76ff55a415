#pragma once

#include <span>
#include <string>
#include <vector>

#include "scriptseq/events.hpp"
#include "scriptseq/rng.hpp"
#include "scriptseq/verbalizer.hpp"

namespace scriptseq {

// A stage-1 training pair. The source is the serialized event sequence with
// each masked region replaced by one <MASK>; the target is
// <s> seg . seg . ... </s> with the masked regions in source order.
struct InfillSample {
  TokenIds source_ids;
  TokenIds target_ids;
  // Event indices for event-level samples; body token offsets (excluding
  // <s>) for random-span samples. Strictly increasing either way.
  std::vector<int> masked_positions;
  // Token length of every target segment, in order.
  std::vector<int> segment_lengths;

  friend bool operator==(const InfillSample&, const InfillSample&) = default;
};

enum class MaskStyle { kEvent, kSpan };

struct MaskingOptions {
  int min_events = 1;
  int max_events = 3;
  NullStyle null_style = NullStyle::kOmit;
  int placement_retries = 100;
};

// Script events followed by the correct candidate.
std::vector<Event> full_sequence(const MCNCInstance& instance);

// Masks exactly the given event indices (any order; duplicates rejected).
InfillSample make_infill_sample_at(std::span<const Event> events,
                                   const Vocabulary& vocab,
                                   std::vector<int> positions,
                                   const MaskingOptions& options = {});

// K ~ uniform{min..max} (capped at |events| - 1) distinct events, chosen
// uniformly without replacement. Throws TooFewEvents below three events.
InfillSample make_infill_sample(std::span<const Event> events, const Vocabulary& vocab,
                                Rng& rng, const MaskingOptions& options = {});
InfillSample make_infill_sample(const MCNCInstance& instance, const Vocabulary& vocab,
                                Rng& rng, const MaskingOptions& options = {});

// Random-span variant: K and the span token lengths come from an event-level
// draw, but the spans land at uniform token offsets within the body and may
// cross separators. Throws PlacementFailure after `placement_retries`.
InfillSample make_random_span_sample(std::span<const Event> events,
                                     const Vocabulary& vocab, Rng& rng,
                                     const MaskingOptions& options = {});
InfillSample make_random_span_sample(const MCNCInstance& instance,
                                     const Vocabulary& vocab, Rng& rng,
                                     const MaskingOptions& options = {});

InfillSample make_sample(MaskStyle style, const MCNCInstance& instance,
                         const Vocabulary& vocab, Rng& rng,
                         const MaskingOptions& options = {});

// Splices target segments back into the <MASK> slots. Throws ArityMismatch
// when the mask count and segment count disagree.
TokenIds reconstruct(const InfillSample& sample);

// "source<TAB>target" with tokens space-joined.
std::string format_sample(const Vocabulary& vocab, const InfillSample& sample);

}  // namespace scriptseq
