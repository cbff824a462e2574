#include <gtest/gtest.h>

#include <atomic>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <set>
#include <thread>

#include "llambda/captioner.hpp"
#include "llambda/llm_http.hpp"
#include "llambda/pipeline/config.hpp"
#include "llambda/pipeline/lexical.hpp"

using namespace llambda;
using namespace llambda::caption;

namespace {

FrameState state(std::size_t idx, const std::string& action, double p, bool uncertain = false) {
    return {idx, {{action, p}}, uncertain};
}

std::vector<FrameState> sequence(const std::string& labels, double p = 0.9) {
    std::vector<FrameState> out;
    for (std::size_t i = 0; i < labels.size(); ++i) {
        out.push_back(labels[i] == '?' ? state(i, "A", 0.1, true) : state(i, std::string(1, labels[i]), p));
    }
    return out;
}

std::string top1(const std::vector<FrameState>& states) {
    std::string out;
    for (const auto& s : states) out += s.uncertain ? "?" : s.top_action();
    return out;
}

ConsistencyRules rules_with(std::initializer_list<std::pair<const char*, const char*>> pairs) {
    ConsistencyRules r;
    for (auto [a, b] : pairs) r.add_incompatible(a, b);
    return r;
}

std::filesystem::path fresh_dir(const std::string& name) {
    const auto dir = std::filesystem::temp_directory_path() / name;
    std::filesystem::remove_all(dir);
    std::filesystem::create_directories(dir);
    return dir;
}

} // namespace

// ---------------------------------------------------------------- states

TEST(MakeStates, TruncatesAndFlags) {
    const std::vector<std::string> tax{"c0", "c1", "c2"};
    const std::vector<labeler::PseudoLabelRecord> recs{{4, {0.5, 0.3, 0.2}, {}}};
    const auto s = make_states(recs, tax, 2, 0.4);
    ASSERT_EQ(s.size(), 1u);
    EXPECT_EQ(s[0].frame_index, 4u);
    EXPECT_FALSE(s[0].uncertain);
    ASSERT_EQ(s[0].topk.size(), 2u);
    EXPECT_EQ(s[0].topk[0], (ActionProb{"c0", 0.5}));
    EXPECT_EQ(s[0].topk[1], (ActionProb{"c1", 0.3}));
}

TEST(MakeStates, UniformIsUncertainAndFullKKeepsEverything) {
    const std::vector<std::string> tax{"a", "b", "c", "d"};
    const std::vector<labeler::PseudoLabelRecord> recs{{0, {0.25, 0.25, 0.25, 0.25}, {}},
                                                       {1, {0.1, 0.2, 0.6, 0.1}, {}}};
    const auto s = make_states(recs, tax, 4, 0.4);
    EXPECT_TRUE(s[0].uncertain);
    EXPECT_FALSE(s[1].uncertain);
    ASSERT_EQ(s[1].topk.size(), 4u);
    EXPECT_EQ(s[1].topk[0].action, "c");
    EXPECT_EQ(s[1].topk[1].action, "b");
    for (std::size_t i = 1; i < 4; ++i) EXPECT_GE(s[1].topk[i - 1].p, s[1].topk[i].p);
}

TEST(MakeStates, Errors) {
    const std::vector<std::string> tax{"a", "b"};
    EXPECT_THROW(make_states({}, tax, 1, 0.4), StageError);
    const std::vector<labeler::PseudoLabelRecord> recs{{0, {0.5, 0.5}, {}}};
    EXPECT_THROW(make_states(recs, tax, 3, 0.4), ConfigError);
    EXPECT_THROW(make_states(recs, tax, 0, 0.4), ConfigError);
}

TEST(MakeStates, PreservesArgmax) {
    Rng rng(6);
    const std::vector<std::string> tax{"a", "b", "c", "d", "e"};
    for (int t = 0; t < 500; ++t) {
        std::vector<double> logits(5);
        for (double& v : logits) v = rng.normal(0.0, 3.0);
        const auto rec = labeler::record_from_logits(0, logits, 3);
        const std::vector<labeler::PseudoLabelRecord> recs{rec};
        const auto s = make_states(recs, tax, 1 + rng.uniform_index(5), 0.4);
        EXPECT_EQ(s[0].top_action(), tax[labeler::argmax(rec.probs)]);
    }
}

// ---------------------------------------------------------------- temporal filter

TEST(TemporalFilter, RunningSleepingSingletonIsCorrected) {
    auto states = sequence("RRRSRRR");
    states[0].topk[0].p = 0.8;
    const auto out = temporal_filter(states, rules_with({{"R", "S"}}));
    EXPECT_EQ(top1(out), "RRRRRRR");
    // the relabeled frame takes the enclosing context's mean probability
    EXPECT_NEAR(out[3].top_prob(), (0.8 + 5 * 0.9) / 6, 1e-12);
    for (std::size_t i = 0; i < 7; ++i) {
        if (i != 3) {
            EXPECT_EQ(out[i], states[i]);
        }
    }
}

TEST(TemporalFilter, ShortContextIsNotEnoughForTheIncompatibilityPass) {
    // left run of 3 alone is below min_run 4 and the right side differs
    const auto out = temporal_filter(sequence("RRRSTT"), rules_with({{"R", "S"}}));
    EXPECT_EQ(top1(out), "RRRSTT");
}

TEST(TemporalFilter, UniformSequenceUnchanged) {
    const auto in = sequence("AAAAAAAA");
    EXPECT_EQ(temporal_filter(in, {}), in);
}

TEST(TemporalFilter, AlternatingSingletonsFollowTheWindowMode) {
    EXPECT_EQ(top1(temporal_filter(sequence("ABABA"), {})), "AAAAA");
}

TEST(TemporalFilter, UncertainFramesAreLeftAlone) {
    const auto in = sequence("AA?BAA");
    const auto out = temporal_filter(in, {});
    EXPECT_EQ(out[2], in[2]);
    EXPECT_EQ(top1(out), "AA?AAA");
}

TEST(TemporalFilter, RejectsInvalidRules) {
    ConsistencyRules r;
    r.window = 4;
    EXPECT_THROW(temporal_filter(sequence("AB"), r), ConfigError);
    r = {};
    r.min_run = 1;
    EXPECT_THROW(temporal_filter(sequence("AB"), r), ConfigError);
}

namespace {

// maximal runs over certain frames, as state indices
std::vector<std::vector<std::size_t>> certain_runs(const std::vector<FrameState>& s) {
    std::vector<std::vector<std::size_t>> runs;
    std::string last;
    for (std::size_t i = 0; i < s.size(); ++i) {
        if (s[i].uncertain) continue;
        if (!runs.empty() && s[i].top_action() == last) {
            runs.back().push_back(i);
        } else {
            runs.push_back({i});
        }
        last = s[i].top_action();
    }
    return runs;
}

std::vector<FrameState> random_states(Rng& rng) {
    static const std::vector<std::string> actions{"A", "B", "C", "D"};
    const std::size_t n = 1 + rng.uniform_index(40);
    const std::size_t k = 1 + rng.uniform_index(3);
    std::vector<FrameState> out;
    // sticky labels so that long runs occur
    std::size_t cur = rng.uniform_index(4);
    for (std::size_t i = 0; i < n; ++i) {
        if (rng.bernoulli(0.4)) cur = rng.uniform_index(4);
        FrameState s;
        s.frame_index = i;
        std::vector<std::size_t> order{0, 1, 2, 3};
        std::swap(order[0], order[cur]);
        double p = rng.uniform(0.3, 1.0);
        for (std::size_t j = 0; j < k; ++j) {
            s.topk.push_back({actions[order[j]], p});
            p *= rng.uniform(0.2, 1.0);
        }
        s.uncertain = rng.bernoulli(0.1);
        out.push_back(std::move(s));
    }
    return out;
}

} // namespace

TEST(TemporalFilter, PropertiesOverRandomSequences) {
    Rng rng(2024);
    const auto rules = rules_with({{"A", "B"}, {"C", "D"}});
    for (int t = 0; t < 10000; ++t) {
        const auto in = random_states(rng);
        const auto out = temporal_filter(in, rules);
        ASSERT_EQ(out.size(), in.size());

        EXPECT_EQ(temporal_filter(out, rules), out) << "not idempotent: " << top1(in);

        std::set<std::string> seen;
        for (const auto& s : in) {
            for (const auto& e : s.topk) seen.insert(e.action);
        }
        for (const auto& s : out) {
            for (const auto& e : s.topk) EXPECT_TRUE(seen.count(e.action)) << e.action;
        }

        for (const auto& run : certain_runs(in)) {
            if (run.size() < 2) continue;
            for (std::size_t i : run) EXPECT_EQ(out[i], in[i]) << "run member changed: " << top1(in);
        }
        for (std::size_t i = 0; i < in.size(); ++i) {
            if (in[i].uncertain) {
                EXPECT_EQ(out[i], in[i]);
            }
            for (std::size_t j = 1; j < out[i].topk.size(); ++j) EXPECT_GE(out[i].topk[j - 1].p, out[i].topk[j].p);
        }

        const auto segs = segment(out);
        const auto back = expand(segs, out.size());
        for (std::size_t i = 0; i < out.size(); ++i) {
            if (out[i].uncertain) {
                EXPECT_FALSE(back[i].has_value());
            } else {
                EXPECT_EQ(back[i], out[i].top_action());
            }
        }
        if (HasFailure()) break;
    }
}

// ---------------------------------------------------------------- segments

TEST(Segment, RunLengthExample) {
    const auto segs = segment(sequence("AAABB"));
    ASSERT_EQ(segs.size(), 2u);
    EXPECT_EQ(segs[0].start, 0u);
    EXPECT_EQ(segs[0].end, 3u);
    EXPECT_EQ(segs[0].action, "A");
    EXPECT_EQ(segs[1].start, 3u);
    EXPECT_EQ(segs[1].end, 5u);
    EXPECT_EQ(segs[1].action, "B");
    EXPECT_NEAR(segs[0].mean_prob, 0.9, 1e-12);
}

TEST(Segment, SingleFrame) {
    const auto segs = segment(sequence("Z"));
    ASSERT_EQ(segs.size(), 1u);
    EXPECT_EQ(segs[0].end - segs[0].start, 1u);
}

TEST(Segment, UncertainFramesSplitSegments) {
    const auto segs = segment(sequence("AA?AA"));
    ASSERT_EQ(segs.size(), 2u);
    EXPECT_EQ(segs[0].end, 2u);
    EXPECT_EQ(segs[1].start, 3u);
}

TEST(Segment, HundredFrameRoundTrip) {
    Rng rng(100);
    std::string labels;
    char cur = 'A';
    for (int i = 0; i < 100; ++i) {
        if (rng.bernoulli(0.15)) cur = static_cast<char>('A' + rng.uniform_index(5));
        labels += cur;
    }
    const auto states = sequence(labels);
    const auto back = expand(segment(states), states.size());
    for (std::size_t i = 0; i < 100; ++i) EXPECT_EQ(back[i], std::string(1, labels[i]));
}

TEST(Segment, CandidatesAverageTheTopKLists) {
    std::vector<FrameState> s{{0, {{"A", 0.6}, {"B", 0.3}}, false}, {1, {{"A", 0.8}, {"C", 0.1}}, false}};
    const auto segs = segment(s);
    ASSERT_EQ(segs.size(), 1u);
    ASSERT_EQ(segs[0].candidates.size(), 2u);
    EXPECT_EQ(segs[0].candidates[0].action, "A");
    EXPECT_NEAR(segs[0].candidates[0].p, 0.7, 1e-12);
    EXPECT_EQ(segs[0].candidates[1].action, "B");
    EXPECT_NEAR(segs[0].candidates[1].p, 0.15, 1e-12);
}

// ---------------------------------------------------------------- prompts

TEST(Prompt, SegmentLineFormat) {
    const ActionSegment s{0, 30, "walking", 0.9, {}};
    EXPECT_EQ(format_segment_line(s, 10.0), "[0.0 s \xE2\x80\x93 3.0 s] walking (confidence 0.90)");
    const std::vector<ActionSegment> segs{s};
    const std::vector<std::string> tax{"walking"};
    const auto p = build_prompt(segs, tax, 10.0);
    EXPECT_NE(p.runtime.find("[0.0 s \xE2\x80\x93 3.0 s] walking (confidence 0.90)"), std::string::npos);
}

TEST(Prompt, Deterministic) {
    const auto segs = segment(sequence("AAABBBCC"));
    const std::vector<std::string> tax{"A", "B", "C"};
    const auto a = build_prompt(segs, tax, 7.5);
    const auto b = build_prompt(segs, tax, 7.5);
    EXPECT_EQ(a.system, b.system);
    EXPECT_EQ(a.runtime, b.runtime);
    EXPECT_EQ(a.sha256(), b.sha256());
}

TEST(Prompt, SystemPromptListsTheDefaultTaxonomyVerbatim) {
    const std::vector<std::string> expected{
        "Sitting",          "Other actions",       "Standing",
        "Walking",          "Eating/Medication",   "Grooming/Hair styling",
        "Exercising",       "Handling objects",    "Interacting/Socializing",
        "Sleeping/Lying down", "Transitioning (Sit/Stand)", "Using mobile phone",
        "Drinking",         "Cleaning",            "Dressing/Undressing",
        "Rubbing/Washing hands"};
    EXPECT_EQ(llambda::default_taxonomy(), expected);
    const std::vector<ActionSegment> segs{{0, 5, "Walking", 0.8, {}}};
    const auto p = build_prompt(segs, llambda::default_taxonomy(), 10.0);
    for (const auto& name : expected) EXPECT_NE(p.system.find("- " + name + "\n"), std::string::npos) << name;
}

TEST(Prompt, CustomTemplates) {
    const std::vector<ActionSegment> segs{{0, 5, "x", 0.5, {}}, {5, 10, "y", 0.75, {}}};
    const std::vector<std::string> tax{"x", "y"};
    const auto p = build_prompt(segs, tax, 5.0, {"T={taxonomy}", "S={segments}"});
    EXPECT_EQ(p.system, "T=- x\n- y");
    EXPECT_EQ(p.runtime, "S=[0.0 s \xE2\x80\x93 1.0 s] x (confidence 0.50)\n[1.0 s \xE2\x80\x93 2.0 s] y (confidence 0.75)");
}

TEST(Prompt, KCandidatesPerSegment) {
    for (std::size_t k : {1u, 3u, 5u}) {
        const std::vector<std::string> tax{"a", "b", "c", "d", "e", "f"};
        std::vector<labeler::PseudoLabelRecord> recs;
        for (std::size_t i = 0; i < 6; ++i) recs.push_back({i, {0.5, 0.2, 0.1, 0.1, 0.06, 0.04}, {}});
        const auto segs = segment(make_states(recs, tax, k, 0.4));
        const auto p = build_prompt(segs, tax, 10.0);
        const auto pos = p.runtime.find("candidates:");
        ASSERT_NE(pos, std::string::npos);
        const std::string line = p.runtime.substr(pos, p.runtime.find('\n', pos) - pos);
        EXPECT_EQ(static_cast<std::size_t>(std::count(line.begin(), line.end(), '(')), k) << line;
    }
}

TEST(Prompt, EmptySegmentsRejected) {
    const std::vector<std::string> tax{"a"};
    EXPECT_THROW(build_prompt({}, tax, 10.0), StageError);
}

TEST(Rules, FromJson) {
    const auto r = rules_from_json(nlohmann::json::parse(
        R"({"min_run": 3, "window": 7, "p_min": 0.5, "incompatible": [["run", "sleep"]]})"));
    EXPECT_EQ(r.min_run, 3u);
    EXPECT_EQ(r.window, 7u);
    EXPECT_EQ(r.p_min, 0.5);
    EXPECT_TRUE(r.is_incompatible("sleep", "run"));
    EXPECT_FALSE(r.is_incompatible("sleep", "walk"));
    EXPECT_THROW(rules_from_json(nlohmann::json::parse(R"({"window": 2})")), ConfigError);
}

// ---------------------------------------------------------------- captions

namespace {

Prompts sample_prompts() {
    const std::vector<std::string> tax{"Walking", "Sitting", "Drinking"};
    const std::vector<ActionSegment> segs{{0, 20, "Walking", 0.9, {}}, {20, 40, "Sitting", 0.8, {}},
                                          {40, 45, "Drinking", 0.6, {}}};
    return build_prompt(segs, tax, 10.0);
}

} // namespace

TEST(Caption, MockMentionsEverySegmentAction) {
    const llm::MockLlmClient mock;
    const auto p = sample_prompts();
    const auto c = generate_caption(p, mock);
    for (const char* a : {"Walking", "Sitting", "Drinking"}) EXPECT_NE(c.text.find(a), std::string::npos);
    EXPECT_EQ(c.text, generate_caption(p, mock).text);
    EXPECT_EQ(c.exchange.attempts, 1);
}

TEST(Caption, ReplayReturnsTheFixture) {
    const auto dir = fresh_dir("llambda_replay");
    const auto p = sample_prompts();
    nlohmann::json fixture = {{"request", llm::chat_request_body({}, p.system, p.runtime)},
                              {"response", "  The person walks, sits down and drinks.\n"}};
    std::ofstream(dir / (llm::prompt_key(p.system, p.runtime) + ".json")) << fixture.dump();
    const llm::ReplayLlmClient replay(dir);
    EXPECT_EQ(generate_caption(p, replay).text, "The person walks, sits down and drinks.");

    const auto other = build_prompt(segment(sequence("AAA")), std::vector<std::string>{"A"}, 10.0);
    try {
        generate_caption(other, replay);
        FAIL() << "expected a missing-fixture error";
    } catch (const ExternalError& e) {
        EXPECT_NE(std::string(e.what()).find("no recorded fixture"), std::string::npos);
    }
}

TEST(Caption, RecordThenReplay) {
    const auto dir = fresh_dir("llambda_record");
    const auto p = sample_prompts();
    const llm::RecordingLlmClient rec(std::make_shared<llm::MockLlmClient>(), dir);
    const auto recorded = generate_caption(p, rec);
    const llm::ReplayLlmClient replay(dir);
    EXPECT_EQ(generate_caption(p, replay).text, recorded.text);
}

TEST(Caption, EmptyCompletionIsAnError) {
    struct Blank final : llm::LlmClient {
        llm::ChatExchange complete(const std::string& s, const std::string& u) const override {
            return {s, u, " \n", 0.0, 2};
        }
    };
    try {
        generate_caption(sample_prompts(), Blank{});
        FAIL();
    } catch (const ExternalError& e) {
        EXPECT_EQ(e.attempts(), 2);
    }
}

TEST(Caption, RecordCarriesPromptHash) {
    const auto p = sample_prompts();
    const auto segs = std::vector<ActionSegment>{{0, 20, "Walking", 0.9, {}}};
    const auto rec = caption_record("clip_1", generate_caption(p, llm::MockLlmClient{}), segs, p);
    EXPECT_EQ(rec["source_id"], "clip_1");
    EXPECT_EQ(rec["prompt_sha256"], sha256_hex(p.system + "\n\n" + p.runtime));
    EXPECT_EQ(rec["segments"].size(), 1u);
}

// ---------------------------------------------------------------- http backend

namespace {

class FakeServer {
public:
    explicit FakeServer(std::vector<int> statuses, std::string body = {}, int delay_ms = 0)
        : statuses_(std::move(statuses)), body_(std::move(body)) {
        server_.Post("/v1/chat/completions", [this, delay_ms](const httplib::Request& req, httplib::Response& res) {
            const std::size_t n = hits_++;
            last_auth_ = req.get_header_value("Authorization");
            last_body_ = req.body;
            if (delay_ms > 0) std::this_thread::sleep_for(std::chrono::milliseconds(delay_ms));
            const int status = n < statuses_.size() ? statuses_[n] : 200;
            res.status = status;
            if (status == 200) {
                const std::string text = body_.empty()
                                             ? nlohmann::json{{"choices", {{{"message", {{"content", "ok caption"}}}}}}}.dump()
                                             : body_;
                res.set_content(text, "application/json");
            }
        });
        port_ = server_.bind_to_any_port("127.0.0.1");
        thread_ = std::thread([this] { server_.listen_after_bind(); });
        server_.wait_until_ready();
    }
    ~FakeServer() {
        server_.stop();
        thread_.join();
    }

    llm::LlmConfig config() const {
        llm::LlmConfig c;
        c.endpoint = "http://127.0.0.1:" + std::to_string(port_) + "/v1/chat/completions";
        c.api_key_env = "LLAMBDA_TEST_KEY";
        c.timeout_ms = 2000;
        return c;
    }

    std::size_t hits() const { return hits_; }
    std::string last_auth() const { return last_auth_; }
    std::string last_body() const { return last_body_; }

private:
    httplib::Server server_;
    std::thread thread_;
    int port_ = 0;
    std::vector<int> statuses_;
    std::string body_;
    std::atomic<std::size_t> hits_{0};
    std::string last_auth_, last_body_;
};

struct RecordedSleeps {
    std::shared_ptr<std::vector<std::chrono::milliseconds>> delays = std::make_shared<std::vector<std::chrono::milliseconds>>();
    llm::Sleeper sleeper() const {
        return [d = delays](std::chrono::milliseconds ms) { d->push_back(ms); };
    }
};

struct KeyGuard {
    KeyGuard() { ::setenv("LLAMBDA_TEST_KEY", "sk-test-secret-123", 1); }
    ~KeyGuard() { ::unsetenv("LLAMBDA_TEST_KEY"); }
};

} // namespace

TEST(HttpClient, RetriesServerErrorsThenSucceeds) {
    KeyGuard key;
    FakeServer server({500, 500, 200});
    RecordedSleeps sleeps;
    const llm::HttpLlmClient client(server.config(), sleeps.sleeper());
    const auto ex = client.complete("sys", "user");
    EXPECT_EQ(ex.attempts, 3);
    EXPECT_EQ(ex.response, "ok caption");
    EXPECT_EQ(server.hits(), 3u);
    EXPECT_EQ(server.last_auth(), "Bearer sk-test-secret-123");
    const auto body = nlohmann::json::parse(server.last_body());
    EXPECT_EQ(body["messages"][0]["role"], "system");
    EXPECT_EQ(body["messages"][1]["content"], "user");
    EXPECT_EQ(body["temperature"], 0.0);
    ASSERT_EQ(sleeps.delays->size(), 2u);
    EXPECT_EQ((*sleeps.delays)[0].count(), 500);
    EXPECT_EQ((*sleeps.delays)[1].count(), 1000);
}

TEST(HttpClient, RateLimitExhaustsRetries) {
    KeyGuard key;
    FakeServer server({429, 429, 429, 429});
    RecordedSleeps sleeps;
    const llm::HttpLlmClient client(server.config(), sleeps.sleeper());
    try {
        client.complete("sys", "user");
        FAIL() << "expected exhaustion";
    } catch (const ExternalError& e) {
        EXPECT_EQ(e.attempts(), 4);
        EXPECT_NE(std::string(e.what()).find("429"), std::string::npos);
    }
    EXPECT_EQ(server.hits(), 4u);
    ASSERT_EQ(sleeps.delays->size(), 3u);
    for (std::size_t i = 1; i < sleeps.delays->size(); ++i) EXPECT_GE((*sleeps.delays)[i], (*sleeps.delays)[i - 1]);
}

TEST(HttpClient, BackoffIsNonDecreasing) {
    for (int r = 1; r < 10; ++r) EXPECT_LE(llm::backoff_delay(500, r), llm::backoff_delay(500, r + 1));
    EXPECT_EQ(llm::backoff_delay(500, 1).count(), 500);
    EXPECT_EQ(llm::backoff_delay(500, 3).count(), 2000);
}

TEST(HttpClient, TimeoutIsRetriedAndReportsAttempts) {
    KeyGuard key;
    FakeServer server({}, {}, 700);
    auto cfg = server.config();
    cfg.timeout_ms = 150;
    cfg.max_retries = 1;
    RecordedSleeps sleeps;
    const llm::HttpLlmClient client(cfg, sleeps.sleeper());
    try {
        client.complete("sys", "user");
        FAIL() << "expected a timeout";
    } catch (const ExternalError& e) {
        EXPECT_EQ(e.attempts(), 2);
    }
}

TEST(HttpClient, MissingCredentialsFailBeforeAnyRequest) {
    ::unsetenv("LLAMBDA_TEST_KEY");
    FakeServer server({});
    const llm::HttpLlmClient client(server.config(), RecordedSleeps{}.sleeper());
    try {
        client.complete("sys", "user");
        FAIL();
    } catch (const ExternalError& e) {
        EXPECT_EQ(e.attempts(), 0);
        EXPECT_NE(std::string(e.what()).find("LLAMBDA_TEST_KEY"), std::string::npos);
    }
    EXPECT_EQ(server.hits(), 0u);
}

TEST(HttpClient, MalformedResponseIsAnError) {
    KeyGuard key;
    FakeServer server({200}, R"({"choices": []})");
    const llm::HttpLlmClient client(server.config(), RecordedSleeps{}.sleeper());
    EXPECT_THROW(client.complete("sys", "user"), ExternalError);
}

TEST(HttpClient, ClientErrorIsNotRetried) {
    KeyGuard key;
    FakeServer server({401});
    const llm::HttpLlmClient client(server.config(), RecordedSleeps{}.sleeper());
    EXPECT_THROW(client.complete("sys", "user"), ExternalError);
    EXPECT_EQ(server.hits(), 1u);
}

TEST(HttpClient, RecordedFixturesHoldNoCredentials) {
    KeyGuard key;
    FakeServer server({});
    const auto dir = fresh_dir("llambda_http_record");
    const auto cfg = server.config();
    const llm::RecordingLlmClient rec(std::make_shared<llm::HttpLlmClient>(cfg, RecordedSleeps{}.sleeper()), dir, cfg);
    rec.complete("sys", "user");
    std::size_t files = 0;
    for (const auto& entry : std::filesystem::directory_iterator(dir)) {
        std::ifstream in(entry.path());
        const std::string text((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
        EXPECT_EQ(text.find("sk-test-secret-123"), std::string::npos);
        EXPECT_EQ(text.find("Bearer"), std::string::npos);
        ++files;
    }
    EXPECT_EQ(files, 1u);
}

TEST(HttpClient, EndpointWithoutSchemeIsAConfigError) {
    llm::LlmConfig c;
    c.endpoint = "localhost:8000/v1";
    EXPECT_THROW(llm::HttpLlmClient{c}, ConfigError);
}

// ---------------------------------------------------------------- lexical overlap

TEST(Lexical, Examples) {
    EXPECT_DOUBLE_EQ(lexical_f1("", ""), 1.0);
    EXPECT_DOUBLE_EQ(lexical_f1("a", ""), 0.0);
    EXPECT_DOUBLE_EQ(lexical_f1("The person walks.", "the PERSON walks."), 1.0);
    EXPECT_NEAR(lexical_f1("a b c", "a b d"), 2.0 / 3.0, 1e-12);
    // punctuation stays part of the token
    EXPECT_NEAR(lexical_f1("walks.", "walks"), 0.0, 1e-12);
    // candidate 4 tokens, reference 2, overlap 2: p = 0.5, r = 1
    EXPECT_NEAR(lexical_f1("a b c d", "a b"), 2.0 / 3.0, 1e-12);
    EXPECT_DOUBLE_EQ(lexical_f1("x y", "z"), 0.0);
    // multiset: the repeated token only matches once
    EXPECT_NEAR(lexical_f1("a a", "a b"), 0.5, 1e-12);
}

TEST(Lexical, Symmetric) {
    Rng rng(12);
    const std::vector<std::string> vocab{"walk", "sit", "the", "person", "drinks", "then"};
    for (int t = 0; t < 200; ++t) {
        std::string a, b;
        for (std::size_t i = rng.uniform_index(6); i > 0; --i) a += vocab[rng.uniform_index(6)] + " ";
        for (std::size_t i = rng.uniform_index(6); i > 0; --i) b += vocab[rng.uniform_index(6)] + " ";
        EXPECT_DOUBLE_EQ(lexical_f1(a, b), lexical_f1(b, a));
    }
}
