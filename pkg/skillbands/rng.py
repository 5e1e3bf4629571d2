"""再現可能な乱数ストリームの導出。

すべての乱数はマスターシードから決定的に導出する。

- ``chunk_generator``: Philox (カウンタベース) の鍵にシード、カウンタ上位 2 語に
  (ストリーム種別, チャンク番号) を入れる。チャンクごとのストリームは互いに
  重ならず、どの順番・どのスレッドで計算しても同じ乱数列になる。
- ``derived_seed``: 複数の整数キー（セル設定や複製番号）から SeedSequence で
  64bit シードを作る。シミュレーションの各複製はこれで独立に再現できる。
"""
from __future__ import annotations

from typing import Iterable

import numpy as np

UINT64_MASK = (1 << 64) - 1

# ストリーム種別（Philox カウンタ counter[2] に入る）
STREAM_BOOTSTRAP = 1
STREAM_EQUICORR = 2


def chunk_generator(seed: int, stream: int, chunk: int) -> np.random.Generator:
    counter = np.array([0, 0, stream, chunk], dtype=np.uint64)
    return np.random.Generator(np.random.Philox(key=int(seed) & UINT64_MASK, counter=counter))


def derived_seed(seed: int, *keys: int) -> int:
    entropy = [int(seed) & UINT64_MASK, *(int(k) & UINT64_MASK for k in keys)]
    state = np.random.SeedSequence(entropy).generate_state(1, dtype=np.uint64)
    return int(state[0])


def derived_generator(seed: int, *keys: int) -> np.random.Generator:
    entropy = [int(seed) & UINT64_MASK, *(int(k) & UINT64_MASK for k in keys)]
    return np.random.default_rng(np.random.SeedSequence(entropy))


def quantize(value: float, scale: int = 1000) -> int:
    """実数パラメータ (a=0.6 など) をシード用の整数キーにする。"""
    return int(round(value * scale))


def keys_from(values: Iterable[float], scale: int = 1000) -> tuple[int, ...]:
    return tuple(quantize(v, scale) for v in values)
