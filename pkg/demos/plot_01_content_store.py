"""
Content-addressed blobs
=======================

Payloads are stored under their SHA-256 digest, so a hash published
somewhere else is enough to fetch and check the bytes.
"""

import tempfile

import numpy as np

from chainlearn.cas import DirectoryStore, MemoryStore, digest

# the digest is plain lowercase hex
print(digest(b"abc"))

# identical payloads collapse to one entry
store = MemoryStore()
h1 = store.put(b"label,x0,x1\n1,0.5,0.25\n")
h2 = store.put(b"label,x0,x1\n1,0.5,0.25\n")
print(h1 == h2, store.get(h1)[:12])

# a directory store survives the process and notices tampering
with tempfile.TemporaryDirectory() as root:
    disk = DirectoryStore(root)
    blob = np.random.default_rng(0).bytes(4096)
    h = disk.put(blob)
    print("stored", h[:16], "...", DirectoryStore(root).get(h) == blob)
