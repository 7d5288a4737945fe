"""Compare the two grounding tools on a synthetic ten-minute video.

``vlm_ground`` scores every 60 s segment on a 1-4 scale and keeps the
relevant ones; ``clip_retrieve`` ranks 10 s windows by embedding similarity.
"""

# %%
import json
import tempfile
from pathlib import Path

import numpy as np

from symphony import Gateway, ScriptedBackend
from symphony.grounding import Complexity, EnhancedQuery, clip_retrieve, vlm_ground
from symphony.media import partition_segments
from symphony.synthetic import make_video

video = make_video(Path(tempfile.mkdtemp()) / "street", "street", duration_s=600, fps=1.0)
segments = partition_segments(video.duration, 60)
print(len(segments), "segments:", ", ".join(str(s) for s in segments[:3]), "...")

# %%
# Pretend the cat shows up in segments 4 and 7. Scoring prompts carry the
# clip range, so a rule can match on it.
scores = {4: 4, 7: 3}
rules = [{"contains": f"Clip range: {segments[n - 1]}",
          "response": json.dumps({"clip_caption": "a grey cat", "relevance_score": s,
                                  "reasoning": "cat visible"})}
         for n, s in scores.items()]
other = json.dumps({"clip_caption": "empty street", "relevance_score": 1, "reasoning": None})
gw = Gateway(ScriptedBackend({"vlm/vlm_scoring": {"rules": rules, "default": other}}))

query = EnhancedQuery("When does the cat appear?", "Find the grey cat.", ("grey cat",), Complexity.TYPE2)
result = vlm_ground(gw, query, video)
print(result.report)

# %%
# Retrieval with the scripted embedder: vectors are hash-seeded, so the
# ranking is arbitrary but repeatable. The point is the shape of the output.
gw = Gateway(ScriptedBackend({"embedder": {"dim": 32}}))
retrieved = clip_retrieve(gw, "grey cat", video)
print(retrieved.report.splitlines()[0])
sims = np.array([c.similarity for c in retrieved.segments])
print("similarities sorted descending:", bool(np.all(np.diff(sims) <= 0)))
