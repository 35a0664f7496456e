#include "dasc/schema.hpp"

#include <unordered_set>

namespace dasc {

const char* attr_value_str(AttrValue v) {
    switch (v) {
        case AttrValue::One: return "1";
        case AttrValue::Zero: return "0";
        case AttrValue::Phi: return "phi";
    }
    return "?";
}

AttrValue attr_value_from_str(const std::string& s) {
    if (s == "1") return AttrValue::One;
    if (s == "0") return AttrValue::Zero;
    if (s == "phi") return AttrValue::Phi;
    throw DataError("unknown attribute value '" + s + "' (expected 1, 0 or phi)");
}

AttributeSchema AttributeSchema::with_aspects(std::vector<Aspect> aspects) {
    if (aspects.empty()) throw ConfigError("schema: no aspects");
    AttributeSchema s;
    s.aspects_ = std::move(aspects);
    std::unordered_set<std::string> seen;
    for (std::size_t a = 0; a < s.aspects_.size(); ++a) {
        const Aspect& asp = s.aspects_[a];
        if (asp.attributes.empty()) {
            throw ConfigError("schema: aspect '" + asp.name + "' has no attributes");
        }
        s.aspect_first_.push_back(s.names_.size());
        for (const std::string& name : asp.attributes) {
            if (!seen.insert(name).second) {
                throw ConfigError("schema: duplicate attribute name '" + name + "'");
            }
            s.names_.push_back(name);
            s.aspect_of_.push_back(a);
        }
    }
    return s;
}

const std::string& AttributeSchema::attribute_name(std::size_t k) const {
    if (k >= names_.size()) throw IndexError("schema: attribute index out of range");
    return names_[k];
}

bool AttributeSchema::has_attribute(const std::string& name) const {
    for (const auto& n : names_) {
        if (n == name) return true;
    }
    return false;
}

std::size_t AttributeSchema::attribute_index(const std::string& name) const {
    for (std::size_t k = 0; k < names_.size(); ++k) {
        if (names_[k] == name) return k;
    }
    std::string valid;
    for (const auto& n : names_) {
        if (!valid.empty()) valid += ", ";
        valid += n;
    }
    throw DataError("unknown attribute '" + name + "'; valid names: " + valid);
}

std::size_t AttributeSchema::aspect_of(std::size_t k) const {
    if (k >= aspect_of_.size()) throw IndexError("schema: attribute index out of range");
    return aspect_of_[k];
}

std::pair<std::size_t, std::size_t> AttributeSchema::aspect_range(
    std::size_t aspect) const {
    if (aspect >= aspects_.size()) throw IndexError("schema: aspect index out of range");
    const std::size_t first = aspect_first_[aspect];
    return {first, first + aspects_[aspect].attributes.size()};
}

std::size_t AttributeSchema::aspect_index(const std::string& name) const {
    for (std::size_t a = 0; a < aspects_.size(); ++a) {
        if (aspects_[a].name == name) return a;
    }
    std::string valid;
    for (const auto& asp : aspects_) {
        if (!valid.empty()) valid += ", ";
        valid += asp.name;
    }
    throw DataError("unknown aspect '" + name + "'; valid names: " + valid);
}

std::uint64_t AttributeSchema::hash() const {
    std::uint64_t h = 1469598103934665603ULL;  // FNV-1a 64 offset basis
    auto mix = [&h](const std::string& s) {
        for (unsigned char c : s) {
            h ^= c;
            h *= 1099511628211ULL;
        }
        h ^= 0x1f;  // field separator
        h *= 1099511628211ULL;
    };
    for (const Aspect& a : aspects_) {
        mix(a.name);
        for (const std::string& n : a.attributes) mix(n);
        h ^= 0x1e;  // aspect separator
        h *= 1099511628211ULL;
    }
    return h;
}

std::size_t AttributeAssignment::num_active() const {
    std::size_t n = 0;
    for (AttrValue v : values_) n += (v != AttrValue::Phi);
    return n;
}

AttributeSchema build_default_schema() {
    return AttributeSchema::with_aspects({
        {"style", {"alpha", "beta", "neutral"}},
        {"emotion",
         {"none", "like", "sadness", "disgust", "anger", "happiness", "fear",
          "surprise"}},
        {"question", {"question", "non_question"}},
    });
}

} // namespace dasc
