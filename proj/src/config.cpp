#include "config.hpp"

namespace exitlm {

void ModelConfig::validate() const {
    if (n_blocks < 1 || d_model < 1 || vocab_size < 1 || max_seq_len < 1) {
        fail(errc::config, "model dims must be >= 1");
    }
    if (kind == backbone_kind::transformer) {
        if (n_heads < 1 || d_model % n_heads != 0) {
            fail(errc::config, "d_model " + std::to_string(d_model) +
                                   " not divisible by n_heads " + std::to_string(n_heads));
        }
    } else {
        if (d_state < 1 || d_conv < 1 || n_groups < 1) {
            fail(errc::config, "mamba dims must be >= 1");
        }
        if (d_inner() % n_groups != 0) {
            fail(errc::config, "d_inner " + std::to_string(d_inner()) +
                                   " not divisible by n_groups " + std::to_string(n_groups));
        }
    }
}

const char * backbone_name(backbone_kind k) {
    return k == backbone_kind::transformer ? "transformer" : "mamba";
}

backbone_kind backbone_from(const std::string & s) {
    if (s == "transformer") return backbone_kind::transformer;
    if (s == "mamba") return backbone_kind::mamba;
    fail(errc::config, "unknown backbone '" + s + "' (want transformer|mamba)");
}

const char * variant_name(exit_variant v) {
    switch (v) {
        case exit_variant::linear: return "linear";
        case exit_variant::ffn:    return "ffn";
        case exit_variant::mamba:  return "mamba";
    }
    return "?";
}

exit_variant variant_from(const std::string & s) {
    if (s == "linear") return exit_variant::linear;
    if (s == "ffn") return exit_variant::ffn;
    if (s == "mamba") return exit_variant::mamba;
    fail(errc::config, "unknown exit variant '" + s + "' (want linear|ffn|mamba)");
}

const char * policy_name(missing_state_policy p) {
    switch (p) {
        case missing_state_policy::kv_copy:       return "copy";
        case missing_state_policy::kv_recompute:  return "recompute";
        case missing_state_policy::ssm_skip:      return "skip";
        case missing_state_policy::ssm_recompute: return "recompute";
    }
    return "?";
}

missing_state_policy policy_from(const std::string & s, backbone_kind k) {
    const bool tf = k == backbone_kind::transformer;
    if (s == "copy") {
        if (!tf) fail(errc::config, "policy 'copy' applies to the transformer backbone only");
        return missing_state_policy::kv_copy;
    }
    if (s == "skip") {
        if (tf) fail(errc::config, "policy 'skip' applies to the mamba backbone only");
        return missing_state_policy::ssm_skip;
    }
    if (s == "recompute") {
        return tf ? missing_state_policy::kv_recompute : missing_state_policy::ssm_recompute;
    }
    fail(errc::config, "unknown policy '" + s + "' (want copy|recompute|skip)");
}

const char * rep_mode_name(rep_mode m) {
    switch (m) {
        case rep_mode::off:       return "off";
        case rep_mode::on:        return "on";
        case rep_mode::auto_skip: return "auto";
    }
    return "?";
}

rep_mode rep_mode_from(const std::string & s) {
    if (s == "off") return rep_mode::off;
    if (s == "on") return rep_mode::on;
    if (s == "auto") return rep_mode::auto_skip;
    fail(errc::config, "unknown repetition mode '" + s + "' (want off|on|auto)");
}

} // namespace exitlm
