// Attention mask construction for the autoregressive model.
//
// Row semantics (query position r, column c allowed means r may attend c):
//   phoneme rows    -> the whole phoneme segment, nothing later
//   prosody rows    -> phoneme segment plus prosody positions up to r
//   speech rows     -> a phoneme window of radius k around the phoneme the
//                      input token realizes, the prosody slots at the same
//                      indices, and the speech prefix up to r
// Head grouping splits speech-row attention across head groups: one group
// sees only the phoneme window, one only the prosody window, one only the
// speech prefix. Non-speech rows keep the full row in every group.
//
// Plain mode drops the prosody segment and the window: speech rows attend
// every phoneme plus the speech prefix, and grouping does not apply.
#pragma once

#include <cstdint>
#include <cstdlib>
#include <string>
#include <vector>

#include "cadence/errors.hpp"
#include "cadence/layout.hpp"
#include "cadence/prosody.hpp"

namespace cadence {

struct MaskConfig {
  int window_k = 1;       // phoneme window radius; -1 = unbounded
  bool grouping = true;   // split speech-row attention across head groups
  bool plain = false;     // no prosody segment, full phoneme attention
  int heads_phoneme = 1;
  int heads_prosody = 1;
  int heads_context = 2;

  int total_heads() const { return heads_phoneme + heads_prosody + heads_context; }

  void validate() const {
    if (window_k < -1) throw ConfigError("mask config: window_k must be >= -1");
    if (heads_phoneme < 1 || heads_prosody < 1 || heads_context < 1)
      throw ConfigError("mask config: each head group needs at least one head");
  }
};

enum class HeadGroup : uint8_t { Ungrouped, PhonemeWindow, ProsodyWindow, Context };

inline const char* head_group_name(HeadGroup g) {
  switch (g) {
    case HeadGroup::Ungrouped: return "ungrouped";
    case HeadGroup::PhonemeWindow: return "phoneme";
    case HeadGroup::ProsodyWindow: return "prosody";
    case HeadGroup::Context: return "context";
  }
  return "?";
}

struct AttnMask {
  int size = 0;
  std::vector<uint8_t> allow;  // row-major size*size

  explicit AttnMask(int s = 0) : size(s), allow(static_cast<size_t>(s) * s, 0) {}

  bool at(int r, int c) const { return allow[static_cast<size_t>(r) * size + c] != 0; }
  void set(int r, int c, bool v) { allow[static_cast<size_t>(r) * size + c] = v ? 1 : 0; }
  const uint8_t* row(int r) const { return allow.data() + static_cast<size_t>(r) * size; }
};

// One mask per head group; `heads` of the model's attention heads share it.
struct HeadMasks {
  struct Group {
    HeadGroup role;
    int heads;
    AttnMask mask;
  };
  std::vector<Group> groups;

  int total_heads() const {
    int n = 0;
    for (const auto& g : groups) n += g.heads;
    return n;
  }
};

namespace detail {

inline bool is_phoneme_segment(PosKind k) {
  return k == PosKind::Phoneme || k == PosKind::SepProsody;
}

inline bool is_speech_segment(PosKind k) {
  return k == PosKind::SepSpeech || k == PosKind::Speech;
}

// Speech step a query position stands for: SEP_C behaves like step 0 so the
// first prediction is windowed around the first phoneme.
inline int effective_step(const StreamPosition& p) {
  return p.kind == PosKind::SepSpeech ? 0 : p.index;
}

}  // namespace detail

// Whether query position r may attend key position c under `role`. Single
// source of truth for masking: the batch builder and the incremental decoder
// both call this. For non-speech queries the role is immaterial; grouping
// only splits speech-row attention. Alignment is consulted only for speech
// queries, so phoneme and prosody rows can be masked before durations are
// known during decoding.
inline bool mask_allows(const SequenceLayout& layout, const AlignmentMap& align,
                        const MaskConfig& cfg, HeadGroup role, int r, int c) {
  const StreamPosition& q = layout.positions[r];
  const StreamPosition& key = layout.positions[c];

  if (q.kind == PosKind::Phoneme || q.kind == PosKind::SepProsody)
    return detail::is_phoneme_segment(key.kind);
  if (q.kind == PosKind::Prosody)
    return detail::is_phoneme_segment(key.kind) || (key.kind == PosKind::Prosody && c <= r);

  if (cfg.plain)
    return key.kind == PosKind::Phoneme || (detail::is_speech_segment(key.kind) && c <= r);

  auto w = align.window(detail::effective_step(q), cfg.window_k);
  bool in_window = key.index >= w.first && key.index <= w.second;
  bool phon_ok = key.kind == PosKind::Phoneme && in_window;
  bool pros_ok = key.kind == PosKind::Prosody && in_window;
  bool ctx_ok = detail::is_speech_segment(key.kind) && c <= r;

  switch (role) {
    case HeadGroup::Ungrouped: return phon_ok || pros_ok || ctx_ok;
    case HeadGroup::PhonemeWindow: return phon_ok;
    case HeadGroup::ProsodyWindow: return pros_ok;
    case HeadGroup::Context: return ctx_ok;
  }
  return false;
}

// Head groups that apply to a layout under a config: three windowed groups
// when grouping is on and a prosody segment exists, one otherwise.
inline std::vector<std::pair<HeadGroup, int>> head_group_plan(const SequenceLayout& layout,
                                                              const MaskConfig& cfg) {
  if (cfg.grouping && !cfg.plain && layout.has_prosody)
    return {{HeadGroup::PhonemeWindow, cfg.heads_phoneme},
            {HeadGroup::ProsodyWindow, cfg.heads_prosody},
            {HeadGroup::Context, cfg.heads_context}};
  return {{HeadGroup::Ungrouped, cfg.total_heads()}};
}

inline HeadMasks build_ar_mask(const SequenceLayout& layout, const AlignmentMap& align,
                               const MaskConfig& cfg) {
  cfg.validate();
  if (cfg.plain && layout.has_prosody)
    throw MaskError("mask: plain config on a layout with a prosody segment");
  if (align.phoneme_count() != layout.phoneme_total)
    throw MaskError("mask: alignment covers " + std::to_string(align.phoneme_count()) +
                    " phonemes, layout has " + std::to_string(layout.phoneme_total));
  if (layout.speech_total > align.total_frames())
    throw MaskError("mask: layout has more speech tokens than aligned frames");

  int s = layout.size();
  HeadMasks out;
  for (auto [role, heads] : head_group_plan(layout, cfg)) {
    AttnMask m(s);
    for (int r = 0; r < s; ++r)
      for (int c = 0; c < s; ++c) m.set(r, c, mask_allows(layout, align, cfg, role, r, c));
    out.groups.push_back({role, heads, std::move(m)});
  }
  return out;
}

// Reference predicate, written independently of build_ar_mask: decides from
// first principles whether query r may attend key c under `role`. Recomputes
// the step-to-phoneme map by scanning raw durations.
inline bool oracle_allow(const SequenceLayout& layout, const std::vector<int>& durations,
                         const MaskConfig& cfg, HeadGroup role, int r, int c) {
  const StreamPosition& q = layout.positions[r];
  const StreamPosition& key = layout.positions[c];

  bool key_phon_seg = key.kind == PosKind::Phoneme || key.kind == PosKind::SepProsody;
  bool key_speech_seg = key.kind == PosKind::SepSpeech || key.kind == PosKind::Speech;

  if (q.kind == PosKind::Phoneme || q.kind == PosKind::SepProsody) return key_phon_seg;
  if (q.kind == PosKind::Prosody)
    return key_phon_seg || (key.kind == PosKind::Prosody && c <= r);

  // Speech-segment query.
  if (cfg.plain) return key.kind == PosKind::Phoneme || (key_speech_seg && c <= r);

  int step = q.kind == PosKind::SepSpeech ? 0 : q.index;
  int fi = -1;
  int covered = 0;
  for (size_t i = 0; i < durations.size(); ++i) {
    covered += durations[i];
    if (step < covered) {
      fi = static_cast<int>(i);
      break;
    }
  }
  if (fi < 0) throw MaskError("oracle: step beyond aligned frames");

  bool in_window = cfg.window_k < 0 || std::abs(key.index - fi) <= cfg.window_k;
  bool phon_ok = key.kind == PosKind::Phoneme && in_window;
  bool pros_ok = key.kind == PosKind::Prosody && in_window;
  bool ctx_ok = key_speech_seg && c <= r;

  switch (role) {
    case HeadGroup::Ungrouped: return phon_ok || pros_ok || ctx_ok;
    case HeadGroup::PhonemeWindow: return phon_ok;
    case HeadGroup::ProsodyWindow: return pros_ok;
    case HeadGroup::Context: return ctx_ok;
  }
  return false;
}

inline AttnMask oracle_mask(const SequenceLayout& layout, const std::vector<int>& durations,
                            const MaskConfig& cfg, HeadGroup role) {
  int s = layout.size();
  AttnMask m(s);
  for (int r = 0; r < s; ++r)
    for (int c = 0; c < s; ++c) m.set(r, c, oracle_allow(layout, durations, cfg, role, r, c));
  return m;
}

// Structural checks on a built mask set: square shape, head budget, no
// unattendable rows, and no attention from causal rows to later positions.
inline void validate_mask(const HeadMasks& masks, const SequenceLayout& layout,
                          const MaskConfig& cfg) {
  if (masks.groups.empty()) throw MaskError("validate: no head groups");
  if (masks.total_heads() != cfg.total_heads())
    throw MaskError("validate: group heads sum to " + std::to_string(masks.total_heads()) +
                    ", config expects " + std::to_string(cfg.total_heads()));
  int s = layout.size();
  for (const auto& g : masks.groups) {
    if (g.mask.size != s) throw MaskError("validate: mask size does not match layout");
    if (g.heads < 1) throw MaskError("validate: head group without heads");
    for (int r = 0; r < s; ++r) {
      bool any = false;
      const StreamPosition& q = layout.positions[r];
      bool causal_row = q.kind == PosKind::Prosody || q.kind == PosKind::SepSpeech ||
                        q.kind == PosKind::Speech;
      for (int c = 0; c < s; ++c) {
        if (!g.mask.at(r, c)) continue;
        any = true;
        // Everything a causal row may legally attend lies at or before it:
        // the phoneme and prosody segments precede the speech segment, and
        // within-segment attention is prefix-only.
        if (causal_row && c > r)
          throw MaskError("validate: causal row " + std::to_string(r) +
                          " attends future position " + std::to_string(c));
      }
      if (!any)
        throw MaskError("validate: row " + std::to_string(r) + " in group " +
                        head_group_name(g.role) + " attends nothing");
    }
  }
}

}  // namespace cadence
