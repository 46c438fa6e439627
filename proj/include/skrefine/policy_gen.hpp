#pragma once

// Seeded random policy generation for fuzzing and oracle tests. Generated
// policies are valid by construction and carry the structural guarantees
// fault injection relies on: at least one channel with a writable
// attachment, and a zero-filled writable data component in every subject.

#include <algorithm>
#include <cstdint>
#include <random>
#include <set>
#include <string>
#include <vector>

#include "skrefine/policy.hpp"

namespace skrefine {

struct PolicyGenOptions {
  uint32_t min_subjects = 2;
  uint32_t max_subjects = 6;
  uint32_t min_cpus = 1;
  uint32_t max_cpus = 4;
  uint32_t max_channels = 3;
  uint32_t max_extra_comps = 2;    // per subject, beyond binary and data
  uint64_t max_comp_pages = 4;
  uint64_t max_gap_pages = 8;      // between consecutive virtual components
  uint64_t first_la_page = 1;      // lowest virtual page used
  uint32_t max_major_frames = 3;
  uint32_t max_minor_frames = 3;   // per cpu per major frame
  uint64_t max_frame_ticks = 100;
  uint32_t max_routes = 3;
};

// micro-configs used by the oracle-equivalence suite: every la stays below
// the 4 MiB naive bound
inline PolicyGenOptions micro_gen_options() {
  PolicyGenOptions o;
  o.min_subjects = 1;
  o.max_subjects = 3;
  o.max_cpus = 2;
  o.max_channels = 2;
  o.max_extra_comps = 1;
  o.max_comp_pages = 2;
  o.max_gap_pages = 2;
  return o;
}

inline constexpr uint64_t kMicroVaBound = 1ULL << 22;

inline Policy gen_random_policy(uint64_t seed, const PolicyGenOptions& opt = {}) {
  std::mt19937_64 rng(seed);
  Policy p;
  p.tick_rate = 10000;

  uint32_t nsubs =
      static_cast<uint32_t>(rand_range(rng, opt.min_subjects, opt.max_subjects));
  uint32_t cpu_cap = std::min(opt.max_cpus, nsubs);
  p.ncpus = static_cast<uint32_t>(
      rand_range(rng, std::min(std::max(opt.min_cpus, 1u), cpu_cap), cpu_cap));

  // channels first so subjects can attach them; attachments are filled in
  // while building subjects
  uint32_t nchans = static_cast<uint32_t>(rand_range(rng, 1, opt.max_channels));
  std::vector<uint64_t> chan_pages(nchans);
  for (uint32_t c = 0; c < nchans; ++c) {
    chan_pages[c] = rand_range(rng, 1, opt.max_comp_pages);
    p.channels.push_back({"chan" + std::to_string(c), chan_pages[c] * kPageSize, {}, 0});
  }
  // each channel names 2 attachment slots: subject indices, first one writable
  std::vector<std::vector<uint32_t>> chan_subjects(nchans);
  for (uint32_t c = 0; c < nchans; ++c) {
    uint32_t a = static_cast<uint32_t>(rand_below(rng, nsubs));
    uint32_t b = static_cast<uint32_t>(rand_below(rng, nsubs));
    if (nsubs > 1)
      while (b == a) b = static_cast<uint32_t>(rand_below(rng, nsubs));
    chan_subjects[c] = {a, b};
  }

  for (uint32_t si = 0; si < nsubs; ++si) {
    Subject s;
    s.name = "sub" + std::to_string(si);
    s.id = si;
    // round-robin keeps every cpu schedulable, the rest is random
    s.cpu = si < p.ncpus ? si : static_cast<uint32_t>(rand_below(rng, p.ncpus));

    uint64_t la_page = opt.first_la_page + rand_below(rng, opt.max_gap_pages + 1);
    auto place = [&](uint64_t pages) {
      uint64_t la = la_page * kPageSize;
      la_page += pages + rand_below(rng, opt.max_gap_pages + 1);
      return la;
    };

    uint64_t bin_pages = rand_range(rng, 1, opt.max_comp_pages);
    uint64_t bin_la = place(bin_pages);
    s.vmem.push_back({"binary", bin_la, bin_pages * kPageSize, Permissions{true, false, true},
                      ContentSource::fill_byte(0x01), false, "", 0});

    uint64_t data_pages = rand_range(rng, 1, opt.max_comp_pages);
    uint64_t data_la = place(data_pages);
    s.vmem.push_back({"data", data_la, data_pages * kPageSize, Permissions{true, true, false},
                      ContentSource::fill_byte(0x00), false, "", 0});

    uint32_t extras = static_cast<uint32_t>(rand_below(rng, opt.max_extra_comps + 1));
    for (uint32_t e = 0; e < extras; ++e) {
      uint64_t pages = rand_range(rng, 1, opt.max_comp_pages);
      uint64_t la = place(pages);
      Permissions rwe = rand_below(rng, 2) ? Permissions{true, true, false}
                                           : Permissions{true, false, false};
      s.vmem.push_back({"extra" + std::to_string(e), la, pages * kPageSize, rwe,
                        ContentSource::fill_byte(static_cast<uint8_t>(rand_below(rng, 256))),
                        false, "", 0});
    }

    for (uint32_t c = 0; c < nchans; ++c)
      for (size_t slot = 0; slot < chan_subjects[c].size(); ++slot) {
        if (chan_subjects[c][slot] != si) continue;
        bool writable = slot == 0 ? true : rand_below(rng, 2) == 0;
        uint64_t la = place(chan_pages[c]);
        s.vmem.push_back({p.channels[c].name, la, p.channels[c].size,
                          Permissions{true, writable, false}, {}, true, p.channels[c].name, 0});
        p.channels[c].attachments.push_back({si, la, writable, 0});
      }

    s.entry_ip = bin_la;
    s.entry_sp = data_la + data_pages * kPageSize - 8;
    p.subjects.push_back(std::move(s));
  }

  // per-cpu subject lists for scheduling
  std::vector<std::vector<uint32_t>> on_cpu(p.ncpus);
  for (const auto& s : p.subjects) on_cpu[s.cpu].push_back(s.id);

  uint32_t nmajor = static_cast<uint32_t>(rand_range(rng, 1, opt.max_major_frames));
  for (uint32_t f = 0; f < nmajor; ++f) {
    MajorFrameSpec mf;
    mf.per_cpu.resize(p.ncpus);
    uint32_t minors = static_cast<uint32_t>(rand_range(rng, 1, opt.max_minor_frames));
    uint64_t length = rand_range(rng, minors, opt.max_frame_ticks);
    for (uint32_t cpu = 0; cpu < p.ncpus; ++cpu) {
      // split `length` ticks into `minors` positive parts
      std::vector<uint64_t> cuts{0, length};
      for (uint32_t m = 1; m < minors; ++m) {
        uint64_t cut = rand_range(rng, 1, length - 1);
        cuts.push_back(cut);
      }
      std::sort(cuts.begin(), cuts.end());
      for (uint32_t m = 0; m + 1 < cuts.size(); ++m) {
        uint64_t ticks = cuts[m + 1] - cuts[m];
        if (ticks == 0) continue;  // duplicate cut, fold into neighbour
        uint32_t sub = on_cpu[cpu][rand_below(rng, on_cpu[cpu].size())];
        mf.per_cpu[cpu].push_back({sub, ticks, 0});
      }
    }
    p.schedule.push_back(std::move(mf));
  }

  uint32_t nroutes = static_cast<uint32_t>(rand_below(rng, opt.max_routes + 1));
  std::set<uint32_t> used_vectors;
  for (uint32_t i = 0; i < nroutes; ++i) {
    uint32_t vector = static_cast<uint32_t>(rand_below(rng, 256));
    if (used_vectors.count(vector)) continue;
    used_vectors.insert(vector);
    p.routing.push_back({vector, static_cast<uint32_t>(rand_below(rng, nsubs)),
                         static_cast<uint32_t>(rand_below(rng, 64)), 0});
  }

  return p;
}

inline Policy gen_micro_policy(uint64_t seed) {
  return gen_random_policy(seed, micro_gen_options());
}

}  // namespace skrefine
