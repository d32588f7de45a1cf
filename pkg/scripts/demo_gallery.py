#!/usr/bin/env python3
"""Enroll a few synthetic subjects, persist the gallery encrypted,
reload it, and run a probe against it."""

import os
import sys
import tempfile

from champ import gallery


def main() -> int:
    subjects = ["alice", "bob", "carol", "dave"]
    gal = [gallery.Template(s, gallery.embed(s, 128)) for s in subjects]
    key = os.urandom(32)

    with tempfile.TemporaryDirectory() as tmp:
        path = os.path.join(tmp, "watchlist.chgx")
        gallery.save_encrypted(path, gal, key)
        print(f"encrypted gallery: {os.path.getsize(path)} bytes, "
              f"key id {gallery.key_fingerprint(key)}")
        loaded = gallery.load_encrypted(path, key)

    probe = gallery.Template("probe", gallery.embed("carol", 128))
    for result in gallery.match(probe, loaded, top_k=3, threshold=-1.0):
        print(f"  rank {result.rank}: {result.subject_id}  cos={result.score:+.4f}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
