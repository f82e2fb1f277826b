#include "moss/autoscan/autoscan.hpp"

#include "moss/core/errors.hpp"
#include "moss/core/ids.hpp"

#include <algorithm>
#include <fstream>

namespace fs = std::filesystem;

namespace moss::autoscan {

using nlohmann::json;

json SessionCursor::to_json() const {
    return {{"byte_offset", byte_offset}, {"last_turn_index", last_turn_index}};
}

SessionCursor SessionCursor::from_json(const std::string& session_id, const json& doc) {
    SessionCursor c;
    c.session_id = session_id;
    c.byte_offset = doc.at("byte_offset").get<std::uint64_t>();
    c.last_turn_index = doc.at("last_turn_index").get<int>();
    return c;
}

std::string transcript_hash(const std::vector<TranscriptEntry>& transcript) {
    std::string data;
    for (const auto& e : transcript) {
        data += role_name(e.role);
        data += '\n';
        data += e.content;
        data += '\n';
    }
    return fnv1a_hex(data);
}

std::shared_ptr<ScriptedEvaluator> ScriptedEvaluator::load(const fs::path& sidecar_path) {
    auto text = read_file(sidecar_path);
    if (!text)
        throw Error(ErrorCode::io_failure, "evaluator sidecar not found: " + sidecar_path.string());
    json doc = json::parse(*text);
    std::map<std::string, std::vector<KeypointTag>> table;
    for (const auto& [hash, tags] : doc.items()) {
        std::vector<KeypointTag> parsed;
        for (const auto& tag : tags) {
            auto level = level_from_name(tag.at(1).get<std::string>());
            if (!level) throw Error(ErrorCode::bad_request, "bad level in sidecar");
            parsed.push_back({tag.at(0).get<std::string>(), *level});
        }
        table[hash] = std::move(parsed);
    }
    return std::make_shared<ScriptedEvaluator>(std::move(table));
}

std::vector<KeypointTag> ScriptedEvaluator::evaluate(const std::vector<TranscriptEntry>& transcript) {
    auto it = table_.find(transcript_hash(transcript));
    if (it == table_.end())
        throw Error(ErrorCode::evaluator_failure,
                    "no sidecar entry for transcript " + transcript_hash(transcript));
    return it->second;
}

json ScanReport::to_json() const {
    return {{"chunks_admitted", chunks_admitted},
            {"batches_sealed", batches_sealed},
            {"records_skipped", records_skipped},
            {"chunks_skipped", chunks_skipped}};
}

SliceResult slice_records(const std::vector<RawRecord>& records, std::uint64_t scan_start,
                          int prior_last_turn) {
    SliceResult result;
    result.consumed_end = scan_start;
    result.last_turn_index = prior_last_turn;

    // Mark usable records: parseable and strictly increasing by turn_index.
    std::vector<bool> usable(records.size(), false);
    std::vector<std::size_t> user_starts;
    int last_turn_seen = prior_last_turn;
    for (std::size_t i = 0; i < records.size(); ++i) {
        const auto& rec = records[i];
        if (!rec.entry || rec.entry->turn_index <= last_turn_seen) {
            result.records_skipped++;
            continue;
        }
        usable[i] = true;
        last_turn_seen = rec.entry->turn_index;
        // Each user turn starts a chunk that the next user turn terminates. A
        // started chunk with no terminator is dangling: held, not emitted,
        // until a later scan completes it.
        if (rec.entry->role == Role::user) user_starts.push_back(i);
    }

    if (user_starts.empty()) {
        // Pure preamble; no user turn can ever claim it, so consume it all.
        if (!records.empty()) {
            result.consumed_end = records.back().end;
            result.last_turn_index = last_turn_seen;
        }
        return result;
    }

    // Content before the first user turn belongs to no chunk; consume it.
    int last_emitted_turn = prior_last_turn;
    for (std::size_t s = 0; s + 1 < user_starts.size(); ++s) {
        std::size_t begin = user_starts[s];
        std::size_t end = user_starts[s + 1]; // exclusive
        CandidateChunk chunk;
        for (std::size_t i = begin; i < end; ++i) {
            if (!usable[i]) continue;
            if (chunk.entries.empty()) chunk.conversation_id = records[i].conversation_id;
            chunk.entries.push_back(*records[i].entry);
        }
        chunk.end_offset = records[end].begin;
        if (!chunk.entries.empty()) {
            last_emitted_turn = chunk.entries.back().turn_index;
            result.chunks.push_back(std::move(chunk));
        }
    }

    // The cursor stops at the dangling user turn's line.
    result.consumed_end = records[user_starts.back()].begin;
    result.last_turn_index = last_emitted_turn;
    return result;
}

AutoscanEngine::AutoscanEngine(StateStore& store, fs::path sessions_dir,
                               std::shared_ptr<ChunkEvaluator> evaluator, int seal_threshold)
    : store_(store), sessions_dir_(std::move(sessions_dir)), evaluator_(std::move(evaluator)),
      seal_threshold_(seal_threshold) {}

std::mutex& AutoscanEngine::session_mutex(const std::string& session_id) {
    std::lock_guard<std::mutex> lock(locks_mu_);
    auto& slot = session_locks_[session_id];
    if (!slot) slot = std::make_unique<std::mutex>();
    return *slot;
}

ScanReport AutoscanEngine::catch_up() {
    ScanReport total;
    std::vector<std::string> sessions;
    if (fs::exists(sessions_dir_))
        for (const auto& f : fs::directory_iterator(sessions_dir_))
            if (f.path().extension() == ".jsonl") sessions.push_back(f.path().stem().string());
    std::sort(sessions.begin(), sessions.end());
    for (const auto& session : sessions) {
        auto report = scan_session(session);
        total.chunks_admitted += report.chunks_admitted;
        total.batches_sealed += report.batches_sealed;
        total.records_skipped += report.records_skipped;
        total.chunks_skipped += report.chunks_skipped;
    }
    return total;
}

ScanReport AutoscanEngine::flag(const std::string& session_id) {
    if (!fs::exists(sessions_dir_ / (session_id + ".jsonl")))
        throw Error(ErrorCode::unknown_session, "no session file for " + session_id);
    return scan_session(session_id);
}

ScanReport AutoscanEngine::scan_session(const std::string& session_id) {
    std::lock_guard<std::mutex> session_lock(session_mutex(session_id));
    ScanReport report;

    SessionCursor cursor;
    cursor.session_id = session_id;
    if (auto doc = store_.load_cursor(session_id))
        cursor = SessionCursor::from_json(session_id, *doc);

    fs::path file = sessions_dir_ / (session_id + ".jsonl");
    std::ifstream in(file, std::ios::binary);
    if (!in) throw Error(ErrorCode::io_failure, "cannot open session file " + file.string());

    in.seekg(0, std::ios::end);
    auto file_size = static_cast<std::uint64_t>(in.tellg());
    if (cursor.byte_offset >= file_size) return report; // nothing new (idempotent)

    in.seekg(static_cast<std::streamoff>(cursor.byte_offset));
    std::string content(file_size - cursor.byte_offset, '\0');
    in.read(content.data(), static_cast<std::streamsize>(content.size()));

    std::vector<RawRecord> records;
    std::uint64_t offset = cursor.byte_offset;
    std::size_t pos = 0;
    while (pos < content.size()) {
        std::size_t nl = content.find('\n', pos);
        if (nl == std::string::npos) break; // newline-less tail: a write in flight, rescan later
        std::string line = content.substr(pos, nl - pos);
        RawRecord rec;
        rec.begin = offset + pos;
        rec.end = offset + nl + 1;
        pos = nl + 1;
        if (!line.empty()) {
            try {
                json doc = json::parse(line);
                TranscriptEntry entry = TranscriptEntry::from_json(doc);
                std::string rec_session = doc.value("session_id", session_id);
                if (rec_session != session_id)
                    throw Error(ErrorCode::malformed_record, "session_id mismatch");
                rec.conversation_id = doc.value("conversation_id", session_id);
                rec.entry = entry;
            } catch (const std::exception&) {
                rec.entry = std::nullopt; // skip, log via report, continue
            }
        }
        records.push_back(std::move(rec));
    }

    auto sliced = slice_records(records, cursor.byte_offset, cursor.last_turn_index);
    report.records_skipped += sliced.records_skipped;

    for (const auto& chunk : sliced.chunks) admit_chunk(chunk, session_id, report);

    // Cursor never decreases and never passes the dangling tail.
    if (sliced.consumed_end > cursor.byte_offset) {
        cursor.byte_offset = sliced.consumed_end;
        cursor.last_turn_index = sliced.last_turn_index;
        store_.save_cursor(session_id, cursor.to_json());
    }
    return report;
}

AdmitDecision AutoscanEngine::admit_chunk(const CandidateChunk& chunk,
                                          const std::string& session_id, ScanReport& report) {
    AdmitDecision decision;
    try {
        decision.tags = evaluator_->evaluate(chunk.entries);
        if (decision.tags.size() < 4 || decision.tags.size() > 7)
            throw Error(ErrorCode::evaluator_failure,
                        "evaluator returned " + std::to_string(decision.tags.size()) + " tags");
    } catch (const std::exception&) {
        report.chunks_skipped++; // chunk skipped, scan continues
        return decision;
    }

    for (const auto& tag : decision.tags)
        if (level_qualifies_for_batch(tag.level)) decision.admitted = true;
    if (!decision.admitted) return decision;

    std::lock_guard<std::mutex> batch_lock(batch_mu_);
    Batch batch;
    if (auto open = store_.find_open_batch(chunk.conversation_id)) {
        batch = *open;
    } else {
        batch.batch_id = prefixed_id("batch");
        batch.conversation_id = chunk.conversation_id;
        batch.state = BatchState::open;
        batch.created_at = Timestamp::now();
        batch.seal_threshold = seal_threshold_;
    }

    ChunkRecord record;
    record.chunk_id = prefixed_id("chunk");
    record.session_id = session_id;
    record.conversation_id = chunk.conversation_id;
    record.first_turn_index = chunk.entries.front().turn_index;
    record.last_turn_index = chunk.entries.back().turn_index;
    record.transcript = chunk.entries;
    record.keypoint_tags = decision.tags;
    record.captured_at = Timestamp::now();
    batch.chunks.push_back(std::move(record));
    report.chunks_admitted++;

    if (static_cast<int>(batch.chunks.size()) >= batch.seal_threshold) {
        batch.transition(BatchState::sealed);
        store_.save_batch(batch);
        report.batches_sealed++;

        Batch fresh;
        fresh.batch_id = prefixed_id("batch");
        fresh.conversation_id = chunk.conversation_id;
        fresh.state = BatchState::open;
        fresh.created_at = Timestamp::now();
        fresh.seal_threshold = seal_threshold_;
        store_.save_batch(fresh);
    } else {
        store_.save_batch(batch);
    }
    return decision;
}

} // namespace moss::autoscan
