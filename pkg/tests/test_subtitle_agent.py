import json

import pytest

from symphony.errors import SubtitleParseFailure
from symphony.media import SubtitleCue, SubtitleTrack
from symphony.subtitle_agent import NO_SUBTITLES, analyze_subtitles, check_relevant_lines
from symphony.types import TimeRange, make_question

from conftest import make_gateway

Q = make_question("What does the chef say about salt?", ["A. too much", "B. not enough"])


def analysis(info, entities="chef; calm", topic="cooking show"):
    return json.dumps({"relevant_subtitle_info": info, "key_entities_and_sentiment": entities,
                       "overall_topic": topic})


def track(n, text="line"):
    return SubtitleTrack(tuple(SubtitleCue(TimeRange.from_ms(i * 2000, i * 2000 + 1500), f"{text} {i}")
                               for i in range(n)))


def test_empty_track_skips_model():
    gw = make_gateway({})
    assert analyze_subtitles(gw, Q, SubtitleTrack(), 60_000) is NO_SUBTITLES
    assert analyze_subtitles(gw, Q, None) is NO_SUBTITLES
    assert gw.exchanges == []
    assert "No subtitles" in NO_SUBTITLES.as_text()


def test_analysis_parsed_and_prompt_holds_rendered_cues():
    gw = make_gateway({"subtitle_llm/subtitle_analysis": analysis("[00:00:02 - 00:00:03]: line 1")})
    result = analyze_subtitles(gw, Q, track(3), 60_000)
    assert result.relevant_subtitle_info == "[00:00:02 - 00:00:03]: line 1"
    prompt = gw.backend.requests[0][2]
    assert "[00:00:04 - 00:00:05]: line 2" in prompt and "(A) too much" in prompt


def test_reprompt_then_failure():
    gw = make_gateway({"subtitle_llm/subtitle_analysis": ["oops", analysis("")]})
    assert analyze_subtitles(gw, Q, track(2)).overall_topic == "cooking show"
    gw = make_gateway({"subtitle_llm/subtitle_analysis": ["oops", json.dumps({"overall_topic": "x"})]})
    with pytest.raises(SubtitleParseFailure):
        analyze_subtitles(gw, Q, track(2))


def test_long_transcript_split_and_merged():
    gw = make_gateway({"subtitle_llm/subtitle_analysis": analysis("part"),
                       "subtitle_llm/subtitle_merge": analysis("merged")})
    result = analyze_subtitles(gw, Q, track(40, "x" * 50), split_chars=1000)
    assert result.relevant_subtitle_info == "merged"
    calls = gw.backend.calls
    assert calls["subtitle_llm/subtitle_merge"] == calls["subtitle_llm/subtitle_analysis"] - 1
    assert all(len(text) < 4000 for role, purpose, text in gw.backend.requests if purpose == "subtitle_analysis")


def test_info_is_capped():
    gw = make_gateway({"subtitle_llm/subtitle_analysis": analysis("y" * 500)})
    result = analyze_subtitles(gw, Q, track(2), max_info_chars=100)
    assert len(result.relevant_subtitle_info) == 100
    assert result.relevant_subtitle_info.endswith("[truncated]")


def test_check_relevant_lines():
    good = "[00:00:01 - 00:00:04]: hello\n[00:01:00 - 00:01:02]: bye"
    assert check_relevant_lines(good, 120_000) == []
    problems = check_relevant_lines("free text\n[00:05:00 - 00:05:02]: late", 120_000)
    assert len(problems) == 2
