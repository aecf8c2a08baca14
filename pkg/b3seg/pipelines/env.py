from __future__ import annotations

from typing import Any, Dict, Optional, Tuple

import gymnasium as gym
import numpy as np

from ..masker import MaskProvider
from ..planner import CandidateSet, mean_predictive_entropy
from ..scene import Scene
from .config import RunConfig
from .run import SegmentationSession, load_scene_for


class ViewSelectionEnv(gym.Env):
    """
    The active segmentation loop as a Gymnasium environment.

    Each step the agent sees the EIG of every freshly sampled candidate view
    and picks one; the view is masked and folded into the posterior, and the
    reward is the realised entropy drop (exact information gain).

    Episodes end after ``config.iterations`` views (truncated) or when the
    early-stop target is met (terminated). The greedy policy ``argmax(obs["eig"])``
    reproduces ``run_pipeline`` with the ``eig`` strategy.
    """

    metadata = {"render_modes": ["rgb_array"]}

    def __init__(
        self,
        config: RunConfig,
        *,
        scene: Optional[Scene] = None,
        masker: Optional[MaskProvider] = None,
        render_mode: Optional[str] = None,
    ) -> None:
        super().__init__()
        self.config = config
        self.scene = scene
        self.masker = masker
        self.render_mode = render_mode
        self.session: Optional[SegmentationSession] = None
        self._pending: Optional[Tuple[CandidateSet, list, np.ndarray]] = None
        self._last_rgb: Optional[np.ndarray] = None

        n = int(config.n_candidates)
        self.observation_space = gym.spaces.Dict({
            "eig": gym.spaces.Box(low=0.0, high=np.inf, shape=(n,), dtype=np.float32),
            "mean_entropy": gym.spaces.Box(low=0.0, high=np.inf, shape=(1,), dtype=np.float32),
        })
        self.action_space = gym.spaces.Discrete(n)

    # ------------------------------------------------------------------
    def _observe(self) -> Dict[str, np.ndarray]:
        s = self.session
        cands = s.candidates(s.iteration + 1)
        outs, scores = s.score(cands)
        self._pending = (cands, outs, scores)
        return {
            # tiny negative round-off from the entropy difference is clipped into the box
            "eig": np.maximum(scores, 0.0).astype(np.float32),
            "mean_entropy": np.array([mean_predictive_entropy(s.state)], dtype=np.float32),
        }

    def _info(self) -> Dict[str, Any]:
        s = self.session
        return {"iteration": s.iteration, "stats_center": s.stats.center.copy(), "stats_radius": s.stats.radius}

    def reset(self, *, seed=None, options=None):
        super().reset(seed=seed)
        config = self.config if seed is None else self.config.with_updates(seed=int(seed))
        if self.scene is None:
            self.scene = load_scene_for(config)
        self.session = SegmentationSession(config, self.scene, self.masker)
        self.session.start()
        return self._observe(), self._info()

    def step(self, action):
        if self.session is None or self._pending is None:
            raise RuntimeError("call reset() before step()")
        a = int(action)
        if not self.action_space.contains(a):
            raise ValueError(f"action {action!r} outside {self.action_space}")
        cands, outs, scores = self._pending
        self._pending = None
        row = self.session.step(choice=(a, cands.cameras[a], outs[a], float(scores[a])))
        self._last_rgb = np.array(outs[a].rgb)

        terminated = self.session.should_stop()
        truncated = not terminated and self.session.iteration >= self.config.iterations
        info = self._info()
        info["row"] = row
        if terminated or truncated:
            obs = {
                "eig": np.zeros(self.action_space.n, dtype=np.float32),
                "mean_entropy": np.array([row.mean_predictive_entropy], dtype=np.float32),
            }
        else:
            obs = self._observe()
        return obs, float(row.exact_ig), bool(terminated), bool(truncated), info

    def render(self):
        if self.render_mode == "rgb_array" and self._last_rgb is not None:
            return (np.clip(self._last_rgb, 0.0, 1.0) * 255.0).astype(np.uint8)
        return None

    def close(self):
        self.session = None
        self._pending = None
