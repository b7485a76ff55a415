#pragma once

// Draws paired event-level and random-span samples and checks them against
// token sequences rebuilt here from the events.

#include <array>
#include <cmath>
#include <string>

#include "scriptseq/corpus.hpp"
#include "scriptseq/masking.hpp"
#include "support/oracle.hpp"

namespace oracle {

struct MaskingAudit {
  std::size_t samples = 0;
  std::size_t roundtrip_ok = 0;
  std::size_t span_roundtrip_ok = 0;
  std::size_t whole_events = 0;   // event-level samples matching the rebuilt source/target
  std::size_t span_paired = 0;    // span samples with paired K and masked length
  std::size_t span_disjoint = 0;
  std::size_t span_splits = 0;    // span samples with a span not aligned to one event
  std::array<std::size_t, 4> k_hist{};
  std::string artifact;           // every sample, formatted, in draw order

  // Largest |count - n/3| / sigma over K = 1, 2, 3.
  double k_max_z() const {
    const double n = static_cast<double>(samples);
    const double p = 1.0 / 3.0;
    const double sigma = std::sqrt(n * p * (1 - p));
    double z = 0.0;
    for (int k = 1; k <= 3; ++k)
      z = std::max(z, std::abs(static_cast<double>(k_hist[k]) - n * p) / sigma);
    return z;
  }
};

inline scriptseq::TokenIds event_ids(const scriptseq::Vocabulary& v, const scriptseq::Event& e) {
  return scriptseq::encode(v, scriptseq::verbalize_event(e));
}

inline MaskingAudit audit_masking(std::size_t n, std::uint64_t seed) {
  using namespace scriptseq;
  const auto grammar = SchemaGrammar::load(grammar_path());
  const std::size_t n_instances = std::max<std::size_t>(1, n / 10);
  const auto data = build_dataset(grammar, {static_cast<long long>(n_instances), 0, 0, seed});
  const Vocabulary vocab = build_vocab(data.train.instances);

  MaskingAudit a;
  for (std::size_t i = 0; i < n; ++i) {
    const MCNCInstance& inst = data.train.instances[i % n_instances];
    const auto events = full_sequence(inst);
    const std::uint64_t s = derive_seed(seed, 0xA0D17, i);

    Rng r1(s);
    const InfillSample ev = make_infill_sample(inst, vocab, r1);
    Rng r2(s);
    const InfillSample sp = make_random_span_sample(inst, vocab, r2);
    ++a.samples;
    const int k = static_cast<int>(ev.masked_positions.size());
    if (k >= 1 && k <= 3) ++a.k_hist[k];

    // Independent rebuild of the full sequence and of the event-level pair.
    TokenIds full = {special::kBos}, src = {special::kBos}, tgt = {special::kBos};
    for (std::size_t j = 0; j < events.size(); ++j) {
      const TokenIds ids = event_ids(vocab, events[j]);
      full.insert(full.end(), ids.begin(), ids.end());
      full.push_back(special::kSep);
      if (std::find(ev.masked_positions.begin(), ev.masked_positions.end(),
                    static_cast<int>(j)) != ev.masked_positions.end()) {
        src.push_back(special::kMask);
        tgt.insert(tgt.end(), ids.begin(), ids.end());
        tgt.push_back(special::kSep);
      } else {
        src.insert(src.end(), ids.begin(), ids.end());
      }
      src.push_back(special::kSep);
    }
    full.push_back(special::kEos);
    src.push_back(special::kEos);
    tgt.push_back(special::kEos);

    if (reconstruct(ev) == full) ++a.roundtrip_ok;
    if (reconstruct(sp) == full) ++a.span_roundtrip_ok;
    if (ev.source_ids == src && ev.target_ids == tgt) ++a.whole_events;

    int ev_len = 0, sp_len = 0;
    for (int l : ev.segment_lengths) ev_len += l;
    for (int l : sp.segment_lengths) sp_len += l;
    const auto masks = std::count(sp.source_ids.begin(), sp.source_ids.end(), special::kMask);
    if (masks == k && sp.segment_lengths.size() == ev.segment_lengths.size() && sp_len == ev_len)
      ++a.span_paired;

    bool disjoint = true, split = false;
    for (std::size_t j = 0; j < sp.masked_positions.size(); ++j) {
      const int start = sp.masked_positions[j];
      const int end = start + sp.segment_lengths[j];
      if (j + 1 < sp.masked_positions.size() && end > sp.masked_positions[j + 1]) disjoint = false;
      // Body offsets are full[] offsets minus the leading <s>; a span is an
      // event iff it starts after a separator and ends at one.
      const bool starts_clean = start == 0 || full[static_cast<std::size_t>(start)] == special::kSep;
      const bool ends_clean = full[static_cast<std::size_t>(end) + 1] == special::kSep;
      bool has_sep = false;
      for (int p = start; p < end; ++p) has_sep |= full[static_cast<std::size_t>(p) + 1] == special::kSep;
      if (!starts_clean || !ends_clean || has_sep) split = true;
    }
    if (disjoint) ++a.span_disjoint;
    if (split) ++a.span_splits;

    a.artifact += format_sample(vocab, ev);
    a.artifact += '\n';
    a.artifact += format_sample(vocab, sp);
    a.artifact += '\n';
  }
  return a;
}

}  // namespace oracle
