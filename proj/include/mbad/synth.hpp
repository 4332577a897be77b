#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "mbad/capture.hpp"
#include "mbad/common.hpp"
#include "mbad/features.hpp"

namespace mbad::synth {

struct HostAddress {
    uint64_t mac = 0;
    uint32_t ip = 0;

    bool operator==(const HostAddress&) const = default;
};

// Polling interval change at a given capture-relative second. Lets one
// capture carry two (or more) steady traffic modes.
struct RateChange {
    double at_second = 0.0;
    double polling_interval_ms = 0.0;
};

// One master polling a set of outstations with read-holding-registers
// request/response pairs over per-RTU TCP sessions.
struct ScenarioConfig {
    int rtu_count = 6;
    double duration_seconds = 180.0;
    double polling_interval_ms = 670.0;
    HostAddress mtu_address;                 // zero = built-in default
    std::vector<HostAddress> rtu_addresses;  // empty = derived defaults
    uint16_t base_port = 502;
    double jitter_ms = 0.0;  // uniform bound on per-poll timing noise
    uint64_t seed = 1;
    int64_t start_epoch = 1451606400;  // capture clock origin, seconds
    std::vector<RateChange> rate_changes;
    // Loss-injection switch: every Nth poll response is dropped from the
    // wire while its sequence numbers advance, so the next response trips
    // the lost-segment tracker. 0 disables.
    int loss_every_n = 0;
};

// Attack traffic mimics volumetric and timing signatures, not protocol
// exploits. An attacker equal to the MTU address runs as a perfect
// insider: scan bursts become replay storms of the flow's last request
// and fake commands are injected into the live polling flows, so only
// timing and rate distinguish them from steady traffic.
struct AttackSpec {
    enum class Kind { scan_burst, fake_command };
    Kind kind = Kind::scan_burst;
    double start_second = 0.0;
    double duration_seconds = 1.0;
    // scan_burst: packets per second; fake_command: command count
    double intensity = 0.0;
    std::optional<HostAddress> attacker;  // unset = built-in distinct attacker host
    bool pause_polling = true;  // attack displaces the steady channel in its window
    bool sweep_ports = true;    // scan probes walk destination ports (distinct attacker only)
};

struct GeneratedCapture {
    capture::RawCapture capture;
    features::LabelSidecar sidecar;
};

// Deterministic for a fixed (config, attacks): identical bytes and labels
// on every run. Every frame an AttackSpec causes is labeled anomalous.
// Throws InvalidWindow on attack windows outside the capture or scan
// rates at or below the steady-state packet rate.
GeneratedCapture generate(const ScenarioConfig& config, const std::vector<AttackSpec>& attacks);

// Concatenate captures on a shared timeline: each part is shifted to
// start where the previous one ended, frames are renumbered, sidecars
// merged with label counts preserved.
GeneratedCapture mix(const std::vector<GeneratedCapture>& parts);

// Scenario file: {"scenario": {...}, "attacks": [...]} or {"mix": [...]}.
struct ScenarioPart {
    ScenarioConfig config;
    std::vector<AttackSpec> attacks;
};

struct ScenarioSpec {
    std::vector<ScenarioPart> parts;  // one part = plain scenario, several = mix
};

ScenarioSpec parse_scenario(const std::string& json_text);
ScenarioSpec load_scenario_file(const std::string& path);

// Generates every part (re-seeded from `seed_override` when provided) and
// mixes them when the spec holds more than one.
GeneratedCapture run_scenario(const ScenarioSpec& spec,
                              std::optional<uint64_t> seed_override = std::nullopt);

}  // namespace mbad::synth
