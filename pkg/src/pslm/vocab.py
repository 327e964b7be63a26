"""Vocabulary layout for typed text/speech token streams.

Text and speech tokens live in disjoint id spaces. Multi-stream models keep
them separate (one vocabulary per stream); the single-stream chain-of-modality
baseline works over a union space where speech ids are offset by the text
vocabulary size.
"""

from dataclasses import dataclass


@dataclass(frozen=True)
class VocabSpec:
    text_vocab_size: int = 64
    speech_vocab_size: int = 128
    text_pad_id: int = 0
    text_eos_id: int = 1
    com_text_marker_id: int = 2
    speech_pad_id: int = 0
    speech_eos_id: int = 1
    com_speech_marker_id: int = 2

    def __post_init__(self):
        text_specials = (self.text_pad_id, self.text_eos_id, self.com_text_marker_id)
        speech_specials = (self.speech_pad_id, self.speech_eos_id, self.com_speech_marker_id)
        if len(set(text_specials)) != 3:
            raise ValueError("text special ids must be distinct")
        if len(set(speech_specials)) != 3:
            raise ValueError("speech special ids must be distinct")
        if not all(0 <= i < self.text_vocab_size for i in text_specials):
            raise ValueError("text special ids must lie inside the text vocabulary")
        if not all(0 <= i < self.speech_vocab_size for i in speech_specials):
            raise ValueError("speech special ids must lie inside the speech vocabulary")

    # --- typed id spaces ---

    @property
    def text_content_ids(self) -> list[int]:
        specials = {self.text_pad_id, self.text_eos_id, self.com_text_marker_id}
        return [i for i in range(self.text_vocab_size) if i not in specials]

    @property
    def speech_content_ids(self) -> list[int]:
        specials = {self.speech_pad_id, self.speech_eos_id, self.com_speech_marker_id}
        return [i for i in range(self.speech_vocab_size) if i not in specials]

    # --- union space used by the chain-of-modality baseline ---

    @property
    def union_vocab_size(self) -> int:
        return self.text_vocab_size + self.speech_vocab_size

    def to_union_speech(self, speech_id: int) -> int:
        if not 0 <= speech_id < self.speech_vocab_size:
            raise ValueError(f"speech id {speech_id} out of range")
        return self.text_vocab_size + speech_id

    def from_union_speech(self, union_id: int) -> int:
        if not self.is_speech_union_id(union_id):
            raise ValueError(f"union id {union_id} is not a speech id")
        return union_id - self.text_vocab_size

    def is_text_union_id(self, union_id: int) -> bool:
        return 0 <= union_id < self.text_vocab_size

    def is_speech_union_id(self, union_id: int) -> bool:
        return self.text_vocab_size <= union_id < self.union_vocab_size

    @property
    def union_text_marker_id(self) -> int:
        return self.com_text_marker_id

    @property
    def union_speech_marker_id(self) -> int:
        return self.text_vocab_size + self.com_speech_marker_id

    @property
    def union_speech_eos_id(self) -> int:
        return self.text_vocab_size + self.speech_eos_id


def default_vocab() -> VocabSpec:
    return VocabSpec()
