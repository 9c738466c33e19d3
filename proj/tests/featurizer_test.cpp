#include <gtest/gtest.h>

#include "msgblocks/featurizer.hpp"

using namespace msgblocks;

namespace {

Message msg(const std::string& label) {
    Message m;
    m.id = "x";
    m.label = label;
    m.text = "t";
    return m;
}

Dataset three_sender_corpus() {
    Dataset ds;
    for (const char* s : {"a@x.com", "a@x.com", "b@y.com"}) {
        Message m = msg("c");
        m.sender = s;
        ds.messages.push_back(m);
    }
    ds.rebuild_label_set();
    return ds;
}

Message random_message(Rng& rng) {
    Message m = msg("c");
    if (rng.below(4) != 0) m.sender = "s" + std::to_string(rng.below(200)) + "@d" +
                                      std::to_string(rng.below(30)) + ".org";
    if (rng.below(4) != 0)
        m.timestamp = static_cast<std::int64_t>(rng.below(2000000000ULL));
    if (rng.below(2)) m.enums["stars"] = std::to_string(1 + rng.below(5));
    if (rng.below(2)) m.enums["chan"] = std::string(1, static_cast<char>('a' + rng.below(4)));
    if (rng.below(2)) m.numerics["len"] = rng.uniform(0, 100);
    return m;
}

} // namespace

// ------------------------------------------------------------------------ fit

TEST(Fit, TopSendersAndFrequencies) {
    const FeaturizerConfig cfg{.top_senders = 2};
    const FeaturizerModel model = FeaturizerModel::fit(three_sender_corpus(), cfg);
    EXPECT_EQ(model.top_senders, (std::vector<std::string>{"a@x.com", "b@y.com"}));
    EXPECT_NEAR(model.sender_freq.at("a@x.com"), 2.0 / 3.0, 1e-15);
    EXPECT_NEAR(model.sender_freq.at("b@y.com"), 1.0 / 3.0, 1e-15);
}

TEST(Fit, TopListTieBreakById) {
    Dataset ds;
    for (const char* s : {"zz@q.com", "aa@q.com"}) {
        Message m = msg("c");
        m.sender = s;
        ds.messages.push_back(m);
    }
    ds.rebuild_label_set();
    const FeaturizerConfig cfg{.top_senders = 1};
    const FeaturizerModel model = FeaturizerModel::fit(ds, cfg);
    EXPECT_EQ(model.top_senders, (std::vector<std::string>{"aa@q.com"}));  // equal counts, id asc
}

TEST(Fit, OrderInvariance) {
    Rng rng(9);
    Dataset ds;
    for (int i = 0; i < 200; ++i) ds.messages.push_back(random_message(rng));
    ds.rebuild_label_set();
    Dataset shuffled = ds;
    Rng shuffler(10);
    shuffler.shuffle(shuffled.messages);

    const FeaturizerModel a = FeaturizerModel::fit(ds);
    const FeaturizerModel b = FeaturizerModel::fit(shuffled);
    EXPECT_EQ(a.top_senders, b.top_senders);
    EXPECT_EQ(a.top_affiliations, b.top_affiliations);
    EXPECT_EQ(a.enum_vocabs, b.enum_vocabs);
    EXPECT_EQ(a.sender_freq, b.sender_freq);
    // means/stds accumulate in a different order, so compare numerically
    ASSERT_EQ(a.numeric_stats.size(), b.numeric_stats.size());
    for (const auto& [field, stats] : a.numeric_stats) {
        EXPECT_NEAR(stats.first, b.numeric_stats.at(field).first, 1e-10);
        EXPECT_NEAR(stats.second, b.numeric_stats.at(field).second, 1e-10);
    }
}

TEST(Fit, RushBinsCoverDayWithEqualWidth) {
    const FeaturizerModel model = FeaturizerModel::fit(three_sender_corpus());
    ASSERT_EQ(model.rush_bin_edges.size(), 50u);
    for (std::size_t b = 0; b < 50; ++b) {
        EXPECT_DOUBLE_EQ(model.rush_bin_edges[b], 1728.0 * static_cast<double>(b));
    }
    // every timestamp falls in exactly one bin
    Rng rng(4);
    const FeatureLayout ly = model.layout();
    for (int i = 0; i < 1000; ++i) {
        Message m = msg("c");
        m.timestamp = static_cast<std::int64_t>(rng.below(4000000000ULL));
        const FeatureVector fv = model.transform(m);
        double sum = 0.0;
        for (std::size_t b = 0; b < ly.rush_len; ++b) sum += fv.values[ly.rush_off + b];
        EXPECT_DOUBLE_EQ(sum, 1.0);
    }
}

// ------------------------------------------------------------------ transform

TEST(Transform, DefaultLayoutIs299) {
    const FeaturizerModel model = FeaturizerModel::fit(three_sender_corpus());
    // 120 senders | 120 affiliations | 1 freq | 7 day | 1 working | 50 rush
    EXPECT_EQ(model.feature_dim(), 299u);
    const FeatureLayout ly = model.layout();
    EXPECT_EQ(ly.senders_len, 120u);
    EXPECT_EQ(ly.affiliations_len, 120u);
    EXPECT_EQ(ly.sender_freq_off, 240u);
    EXPECT_EQ(ly.day_off, 241u);
    EXPECT_EQ(ly.working_off, 248u);
    EXPECT_EQ(ly.rush_off, 249u);
}

TEST(Transform, EnumsAndNumericsExtendLayout) {
    Dataset ds = three_sender_corpus();
    for (int i = 0; i < 5; ++i) {
        Message m = msg("c");
        m.enums["stars"] = std::to_string(i + 1);
        m.numerics["len"] = i;
        ds.messages.push_back(m);
    }
    const FeaturizerModel model = FeaturizerModel::fit(ds);
    EXPECT_EQ(model.feature_dim(), 299u + 5u + 1u);
}

TEST(Transform, AbsentEverythingIsZeroVector) {
    const FeaturizerModel model = FeaturizerModel::fit(three_sender_corpus());
    const FeatureVector fv = model.transform(msg("c"));
    EXPECT_EQ(fv.values.size(), 299u);
    for (double x : fv.values) EXPECT_EQ(x, 0.0);
}

TEST(Transform, MondayMorningTimestamp) {
    const FeaturizerModel model = FeaturizerModel::fit(three_sender_corpus());
    Message m = msg("c");
    m.timestamp = parse_iso8601_utc("2021-03-01T10:00:00Z");  // Monday 10:00 UTC
    const FeatureVector fv = model.transform(m);
    const FeatureLayout ly = model.layout();
    EXPECT_EQ(fv.values[ly.day_off + 0], 1.0);  // Monday slot
    for (int d = 1; d < 7; ++d) EXPECT_EQ(fv.values[ly.day_off + d], 0.0);
    EXPECT_EQ(fv.values[ly.working_off], 1.0);
}

TEST(Transform, WorkingHoursBoundaries) {
    const FeaturizerModel model = FeaturizerModel::fit(three_sender_corpus());
    const FeatureLayout ly = model.layout();
    Message m = msg("c");
    m.timestamp = parse_iso8601_utc("2021-03-07T10:00:00Z");  // Sunday 10:00
    EXPECT_EQ(model.transform(m).values[ly.working_off], 0.0);
    m.timestamp = parse_iso8601_utc("2021-03-01T08:59:59Z");  // Monday before 9
    EXPECT_EQ(model.transform(m).values[ly.working_off], 0.0);
    m.timestamp = parse_iso8601_utc("2021-03-01T17:59:59Z");
    EXPECT_EQ(model.transform(m).values[ly.working_off], 1.0);
    m.timestamp = parse_iso8601_utc("2021-03-01T18:00:00Z");
    EXPECT_EQ(model.transform(m).values[ly.working_off], 0.0);
}

TEST(Transform, EnumOneHot) {
    Dataset ds;
    for (int i = 1; i <= 5; ++i) {
        Message m = msg("c");
        m.enums["stars"] = std::to_string(i);
        ds.messages.push_back(m);
    }
    ds.rebuild_label_set();
    const FeaturizerModel model = FeaturizerModel::fit(ds);
    Message m = msg("c");
    m.enums["stars"] = "4";
    const FeatureVector fv = model.transform(m);
    const auto [off, len] = model.layout().enum_slices.at("stars");
    ASSERT_EQ(len, 5u);
    const std::vector<double> slice(fv.values.begin() + off, fv.values.begin() + off + len);
    EXPECT_EQ(slice, (std::vector<double>{0, 0, 0, 1, 0}));
}

TEST(Transform, RushHourBinArithmetic) {
    const FeaturizerModel model = FeaturizerModel::fit(three_sender_corpus());
    Message m = msg("c");
    m.timestamp = parse_iso8601_utc("2021-03-01T13:30:00Z");  // 48600 s -> bin 28
    const FeatureVector fv = model.transform(m);
    const FeatureLayout ly = model.layout();
    for (std::size_t b = 0; b < 50; ++b) {
        EXPECT_EQ(fv.values[ly.rush_off + b], b == 28 ? 1.0 : 0.0);
    }
}

TEST(Transform, SenderOneHotAndFrequency) {
    const FeaturizerConfig cfg{.top_senders = 2};
    const FeaturizerModel model = FeaturizerModel::fit(three_sender_corpus(), cfg);
    const FeatureLayout ly = model.layout();

    Message m = msg("c");
    m.sender = "b@y.com";
    FeatureVector fv = model.transform(m);
    EXPECT_EQ(fv.values[ly.senders_off + 0], 0.0);
    EXPECT_EQ(fv.values[ly.senders_off + 1], 1.0);
    EXPECT_NEAR(fv.values[ly.sender_freq_off], 1.0 / 3.0, 1e-15);

    m.sender = "stranger@z.com";  // unseen: zero slice, zero frequency
    fv = model.transform(m);
    EXPECT_EQ(fv.values[ly.senders_off + 0], 0.0);
    EXPECT_EQ(fv.values[ly.senders_off + 1], 0.0);
    EXPECT_EQ(fv.values[ly.sender_freq_off], 0.0);
}

TEST(Transform, AffiliationDerivedFromEmailSender) {
    const FeaturizerModel model = FeaturizerModel::fit(three_sender_corpus());
    const FeatureLayout ly = model.layout();
    Message m = msg("c");
    m.sender = "a@x.com";  // affiliation "x.com" was the most frequent at fit
    const FeatureVector fv = model.transform(m);
    EXPECT_EQ(fv.values[ly.affiliations_off + 0], 1.0);

    // explicit affiliation field wins over derivation
    m.affiliation = "y.com";
    const FeatureVector fv2 = model.transform(m);
    EXPECT_EQ(fv2.values[ly.affiliations_off + 0], 0.0);
    EXPECT_EQ(fv2.values[ly.affiliations_off + 1], 1.0);
}

TEST(Transform, AffiliationAbsentForNonEmailSender) {
    EXPECT_FALSE(affiliation_of(msg("c")).has_value());
    Message m = msg("c");
    m.sender = "not-an-email";
    EXPECT_FALSE(affiliation_of(m).has_value());
    m.sender = "a@b@c";
    EXPECT_FALSE(affiliation_of(m).has_value());
    m.sender = "@x.com";
    EXPECT_FALSE(affiliation_of(m).has_value());
    m.sender = "a@";
    EXPECT_FALSE(affiliation_of(m).has_value());
}

TEST(Transform, NumericZScoring) {
    Dataset ds;
    for (double v : {1.0, 2.0, 3.0, 4.0}) {  // mean 2.5, population std sqrt(1.25)
        Message m = msg("c");
        m.numerics["len"] = v;
        ds.messages.push_back(m);
    }
    ds.rebuild_label_set();
    const FeaturizerModel model = FeaturizerModel::fit(ds);
    Message m = msg("c");
    m.numerics["len"] = 4.0;
    const FeatureVector fv = model.transform(m);
    const std::size_t slot = model.layout().numeric_slots.at("len");
    EXPECT_NEAR(fv.values[slot], (4.0 - 2.5) / std::sqrt(1.25), 1e-12);
}

TEST(Transform, ConstantNumericFieldUsesUnitStd) {
    Dataset ds;
    for (int i = 0; i < 3; ++i) {
        Message m = msg("c");
        m.numerics["k"] = 7.0;
        ds.messages.push_back(m);
    }
    ds.rebuild_label_set();
    const FeaturizerModel model = FeaturizerModel::fit(ds);
    Message m = msg("c");
    m.numerics["k"] = 9.0;
    EXPECT_DOUBLE_EQ(model.transform(m).values[model.layout().numeric_slots.at("k")], 2.0);
}

// ----------------------------------------------------------------- properties

TEST(Properties, OneHotAndAbsenceInvariants) {
    Rng rng(21);
    Dataset ds;
    for (int i = 0; i < 300; ++i) ds.messages.push_back(random_message(rng));
    ds.rebuild_label_set();
    const FeaturizerModel model = FeaturizerModel::fit(ds);
    const FeatureLayout ly = model.layout();

    for (int i = 0; i < 100; ++i) {
        const Message m = random_message(rng);
        const FeatureVector fv = model.transform(m);
        ASSERT_EQ(fv.values.size(), model.feature_dim());

        const auto slice_sum = [&](std::size_t off, std::size_t len) {
            double s = 0.0;
            for (std::size_t j = 0; j < len; ++j) s += fv.values[off + j];
            return s;
        };
        const double senders = slice_sum(ly.senders_off, ly.senders_len);
        EXPECT_TRUE(senders == 0.0 || senders == 1.0);
        const double day = slice_sum(ly.day_off, 7);
        const double rush = slice_sum(ly.rush_off, ly.rush_len);
        if (m.timestamp) {
            EXPECT_EQ(day, 1.0);
            EXPECT_EQ(rush, 1.0);
        } else {
            EXPECT_EQ(day, 0.0);
            EXPECT_EQ(rush, 0.0);
            EXPECT_EQ(fv.values[ly.working_off], 0.0);
        }
        for (const auto& [field, slice] : ly.enum_slices) {
            const double s = slice_sum(slice.first, slice.second);
            EXPECT_TRUE(s == 0.0 || s == 1.0) << field;
        }
    }
}

TEST(Properties, FeatureDimFixedAcrossTransforms) {
    Rng rng(33);
    Dataset ds;
    for (int i = 0; i < 100; ++i) ds.messages.push_back(random_message(rng));
    ds.rebuild_label_set();
    const FeaturizerModel model = FeaturizerModel::fit(ds);
    const std::size_t dim = model.feature_dim();
    for (int i = 0; i < 100; ++i) {
        Message m = random_message(rng);
        m.enums["never-seen-field"] = "v";  // unseen fields add no slots
        m.numerics["novel"] = 1.0;
        EXPECT_EQ(model.transform(m).values.size(), dim);
    }
}

TEST(Properties, UnseenOptionsMapToZeroSlices) {
    Dataset ds;
    Message a = msg("c");
    a.enums["stars"] = "1";
    ds.messages.push_back(a);
    Message b = msg("c");
    b.enums["stars"] = "2";
    ds.messages.push_back(b);
    ds.rebuild_label_set();
    const FeaturizerModel model = FeaturizerModel::fit(ds);
    Message m = msg("c");
    m.enums["stars"] = "9";
    const auto [off, len] = model.layout().enum_slices.at("stars");
    const FeatureVector fv = model.transform(m);
    for (std::size_t j = 0; j < len; ++j) EXPECT_EQ(fv.values[off + j], 0.0);
}

// -------------------------------------------------------------- serialization

TEST(Serialization, JsonRoundTripTransformsBitExact) {
    Rng rng(55);
    Dataset ds;
    for (int i = 0; i < 250; ++i) ds.messages.push_back(random_message(rng));
    ds.rebuild_label_set();
    const FeaturizerModel model = FeaturizerModel::fit(ds);
    const FeaturizerModel back = FeaturizerModel::from_json(
        nlohmann::json::parse(model.to_json().dump()));

    EXPECT_EQ(back.feature_dim(), model.feature_dim());
    for (int i = 0; i < 50; ++i) {
        const Message m = random_message(rng);
        EXPECT_EQ(model.transform(m).values, back.transform(m).values);  // bitwise
    }
}

TEST(Serialization, FileRoundTrip) {
    const FeaturizerModel model = FeaturizerModel::fit(three_sender_corpus());
    const std::string path = std::string(::testing::TempDir()) + "feat.json";
    model.save(path);
    const FeaturizerModel back = FeaturizerModel::load(path);
    EXPECT_EQ(back.top_senders, model.top_senders);
    EXPECT_EQ(back.sender_freq, model.sender_freq);
    EXPECT_EQ(back.rush_bin_edges, model.rush_bin_edges);
}
