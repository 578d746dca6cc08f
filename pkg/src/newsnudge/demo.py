"""Deterministic demo inputs: a synthetic user file plus a ready-to-run config."""

from __future__ import annotations

from pathlib import Path

import numpy as np
import yaml

from .cohort import UserProfile, save_users

DEMO_SEED = 20260823
DEMO_USERS = 500


def make_demo_users(n: int = DEMO_USERS, seed: int = DEMO_SEED) -> list[UserProfile]:
    """Synthesize a user pool where most accounts survive the cohort funnel
    and each exclusion stage is exercised by at least a few."""
    rng = np.random.default_rng(seed)
    users = []
    for i in range(n):
        followers = int(rng.integers(100, 15000))
        following = int(rng.integers(150, 4000))
        us_based, english, verified, reply_only = True, True, False, False
        bot_score = float(rng.uniform(0.0, 0.55))
        weekly = int(rng.integers(2, 12))
        roll = rng.random()
        if roll < 0.04:
            us_based = False
        elif roll < 0.08:
            verified = True
        elif roll < 0.12:
            weekly = int(rng.integers(0, 2))
        elif roll < 0.16:
            weekly = int(rng.integers(60, 120))
        elif roll < 0.20:
            followers = int(rng.integers(0, 79))
        elif roll < 0.24:
            bot_score = float(rng.uniform(0.61, 0.95))
        users.append(
            UserProfile(
                user_id=f"u{i:05d}",
                us_based=us_based,
                english=english,
                verified=verified,
                username=f"demo_user_{i:05d}",
                followers=followers,
                following=following,
                statuses=int(rng.integers(200, 40000)),
                favorites=int(rng.integers(100, 60000)),
                listed=int(rng.integers(0, 40)),
                bot_score=round(bot_score, 4),
                weekly_keyword_tweets=weekly,
                reply_only=reply_only,
            )
        )
    return users


def demo_config(users_path: str = "users.csv") -> dict:
    return {
        "paths": {"users": users_path},
        "cohort": {"min_keyword_tweets": 2, "activity_cap": "p90"},
        "assignment": {"seed": 101, "proportions": [1, 1, 1]},
        "simulation": {
            "duration_days": 14,
            "scrape_interval_hours": 8,
            "reply_cooldown_hours": 24,
            "seed": 102,
            "true_effects": {
                "female_bot.news_like_pct": 0.004,
                "female_bot.news_rt_pct": 0.003,
                "male_bot.news_like_pct": 0.002,
            },
        },
        "measurement": {"seed": 103, "window": 100, "empty_window_rate": 0.02},
        "exclusion": {
            "rel_decrease": 0.2,
            "rel_increase": 0.5,
            "absolute_cap": 200,
            "variants": [200, 500, "none"],
        },
        "estimation": {
            "estimands": ["ITT", "Treated"],
            "hc_variant": "HC0",
            "subgroup_splits": ["political_engagement", "topic"],
        },
    }


def write_demo(target_dir: str | Path) -> Path:
    """Write users.csv and config.yaml into target_dir; returns the config path."""
    target = Path(target_dir)
    target.mkdir(parents=True, exist_ok=True)
    save_users(make_demo_users(), target / "users.csv")
    config_path = target / "config.yaml"
    with config_path.open("w", encoding="utf-8", newline="\n") as fh:
        yaml.safe_dump(demo_config(), fh, sort_keys=True)
    return config_path
