#include "scriptseq/masking.hpp"

#include <algorithm>
#include <numeric>

#include "scriptseq/errors.hpp"

namespace scriptseq {
namespace {

void require_events(std::size_t n) {
  if (n < 3)
    throw TooFewEvents("event-level masking needs at least 3 events, got " +
                       std::to_string(n));
}

std::string join(const Tokens& tokens) {
  std::string out;
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    if (i) out += ' ';
    out += tokens[i];
  }
  return out;
}

}  // namespace

std::vector<Event> full_sequence(const MCNCInstance& instance) {
  std::vector<Event> out = instance.script.events;
  out.push_back(instance.answer());
  return out;
}

InfillSample make_infill_sample_at(std::span<const Event> events,
                                   const Vocabulary& vocab, std::vector<int> positions,
                                   const MaskingOptions& options) {
  std::sort(positions.begin(), positions.end());
  if (std::adjacent_find(positions.begin(), positions.end()) != positions.end())
    throw DataError("masked event positions must be distinct");
  if (!positions.empty() &&
      (positions.front() < 0 || positions.back() >= static_cast<int>(events.size())))
    throw DataError("masked event position out of range");

  std::vector<Slot> source_slots(events.begin(), events.end());
  std::vector<Event> masked;
  InfillSample sample;
  for (int p : positions) {
    source_slots[p] = kMaskSlot;
    masked.push_back(events[p]);
    sample.segment_lengths.push_back(
        static_cast<int>(verbalize_event(events[p], options.null_style).size()));
  }
  sample.source_ids = encode(vocab, verbalize_sequence(source_slots, true, options.null_style));
  sample.target_ids = encode(vocab, verbalize_events(masked, true, options.null_style));
  sample.masked_positions = std::move(positions);
  return sample;
}

InfillSample make_infill_sample(std::span<const Event> events, const Vocabulary& vocab,
                                Rng& rng, const MaskingOptions& options) {
  require_events(events.size());
  const int n = static_cast<int>(events.size());
  const int span = options.max_events - options.min_events + 1;
  int k = options.min_events + static_cast<int>(uniform_index(rng, span));
  k = std::min(k, n - 1);

  std::vector<int> idx(n);
  std::iota(idx.begin(), idx.end(), 0);
  for (int i = 0; i < k; ++i) {
    const int j = i + static_cast<int>(uniform_index(rng, n - i));
    std::swap(idx[i], idx[j]);
  }
  idx.resize(k);
  return make_infill_sample_at(events, vocab, std::move(idx), options);
}

InfillSample make_infill_sample(const MCNCInstance& instance, const Vocabulary& vocab,
                                Rng& rng, const MaskingOptions& options) {
  return make_infill_sample(full_sequence(instance), vocab, rng, options);
}

InfillSample make_random_span_sample(std::span<const Event> events,
                                     const Vocabulary& vocab, Rng& rng,
                                     const MaskingOptions& options) {
  const InfillSample paired = make_infill_sample(events, vocab, rng, options);
  const std::vector<int>& lengths = paired.segment_lengths;

  const TokenIds body = encode(vocab, verbalize_events(events, false, options.null_style));
  const int body_len = static_cast<int>(body.size());

  std::vector<std::pair<int, int>> spans;  // offset, length
  bool placed = false;
  for (int attempt = 0; attempt < options.placement_retries && !placed; ++attempt) {
    spans.clear();
    placed = true;
    for (int len : lengths) {
      if (len > body_len) {
        placed = false;
        break;
      }
      const int offset = static_cast<int>(uniform_index(rng, body_len - len + 1));
      const bool overlaps = std::any_of(spans.begin(), spans.end(), [&](const auto& s) {
        return offset < s.first + s.second && s.first < offset + len;
      });
      if (overlaps) {
        placed = false;
        break;
      }
      spans.emplace_back(offset, len);
    }
  }
  if (!placed)
    throw PlacementFailure("could not place " + std::to_string(lengths.size()) +
                           " disjoint spans after " +
                           std::to_string(options.placement_retries) + " attempts");
  std::sort(spans.begin(), spans.end());

  InfillSample sample;
  sample.source_ids.push_back(special::kBos);
  sample.target_ids.push_back(special::kBos);
  int cursor = 0;
  for (const auto& [offset, len] : spans) {
    sample.source_ids.insert(sample.source_ids.end(), body.begin() + cursor,
                             body.begin() + offset);
    sample.source_ids.push_back(special::kMask);
    sample.target_ids.insert(sample.target_ids.end(), body.begin() + offset,
                             body.begin() + offset + len);
    sample.target_ids.push_back(special::kSep);
    sample.masked_positions.push_back(offset);
    sample.segment_lengths.push_back(len);
    cursor = offset + len;
  }
  sample.source_ids.insert(sample.source_ids.end(), body.begin() + cursor, body.end());
  sample.source_ids.push_back(special::kEos);
  sample.target_ids.push_back(special::kEos);
  return sample;
}

InfillSample make_random_span_sample(const MCNCInstance& instance,
                                     const Vocabulary& vocab, Rng& rng,
                                     const MaskingOptions& options) {
  return make_random_span_sample(full_sequence(instance), vocab, rng, options);
}

InfillSample make_sample(MaskStyle style, const MCNCInstance& instance,
                         const Vocabulary& vocab, Rng& rng,
                         const MaskingOptions& options) {
  return style == MaskStyle::kEvent ? make_infill_sample(instance, vocab, rng, options)
                                    : make_random_span_sample(instance, vocab, rng, options);
}

TokenIds reconstruct(const InfillSample& sample) {
  const TokenIds& tgt = sample.target_ids;
  if (tgt.size() < 2 || tgt.front() != special::kBos || tgt.back() != special::kEos)
    throw ArityMismatch("target must be wrapped in <s> ... </s>");

  // Segment boundaries: from the recorded lengths, or by splitting on "."
  // when none were recorded.
  std::vector<std::pair<std::size_t, std::size_t>> segments;
  const std::size_t end = tgt.size() - 1;
  if (!sample.segment_lengths.empty()) {
    std::size_t pos = 1;
    for (int len : sample.segment_lengths) {
      if (len < 0 || pos + static_cast<std::size_t>(len) >= end + 1)
        throw ArityMismatch("segment lengths exceed the target");
      segments.emplace_back(pos, static_cast<std::size_t>(len));
      pos += static_cast<std::size_t>(len);
      if (pos >= end || tgt[pos] != special::kSep)
        throw ArityMismatch("target segment not followed by a separator");
      ++pos;
    }
    if (pos != end) throw ArityMismatch("target has tokens beyond the recorded segments");
  } else {
    std::size_t start = 1;
    for (std::size_t i = 1; i < end; ++i) {
      if (tgt[i] == special::kSep) {
        segments.emplace_back(start, i - start);
        start = i + 1;
      }
    }
    if (start != end) segments.emplace_back(start, end - start);
  }

  const auto masks = static_cast<std::size_t>(
      std::count(sample.source_ids.begin(), sample.source_ids.end(), special::kMask));
  if (masks != segments.size())
    throw ArityMismatch("source has " + std::to_string(masks) + " masks but target has " +
                        std::to_string(segments.size()) + " segments");

  TokenIds out;
  std::size_t next = 0;
  for (TokenId id : sample.source_ids) {
    if (id != special::kMask) {
      out.push_back(id);
      continue;
    }
    const auto [pos, len] = segments[next++];
    out.insert(out.end(), tgt.begin() + static_cast<std::ptrdiff_t>(pos),
               tgt.begin() + static_cast<std::ptrdiff_t>(pos + len));
  }
  return out;
}

std::string format_sample(const Vocabulary& vocab, const InfillSample& sample) {
  return join(decode(vocab, sample.source_ids)) + '\t' +
         join(decode(vocab, sample.target_ids));
}

}  // namespace scriptseq
