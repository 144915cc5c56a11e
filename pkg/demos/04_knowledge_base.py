"""Knowledge chunking, retrieval, and instruction routing.

Builds a small glossary index with the offline hashed embedder, retrieves
by exact cosine similarity, and shows how instructions route between the
knowledge path (definition questions) and the agent path (analysis tasks).
"""

from treelab.knowledge import KnowledgeBase, build_context_prompt, chunk_text

GLOSSARY = [
    "Crown width is the horizontal extent of a tree crown measured across its widest axis.",
    "Support height, also called crown base height, is the height above ground where the live crown begins.",
    "Canopy cover is the fraction of ground area shaded by tree crowns viewed from above.",
]

print("== Chunking ==")
long_text = " ".join(f"token{i}" for i in range(9000))
sizes = [len(c.split()) for c in chunk_text(long_text)]
print(f"a 9000-token document chunks to blocks of {sizes} tokens")

print("\n== Indexing and retrieval ==")
kb = KnowledgeBase()
for i, entry in enumerate(GLOSSARY):
    kb.ingest(entry, doc_id=f"glossary-{i}")
print(f"indexed {len(kb)} chunks at dimension {len(kb.chunks[0].embedding)}")

query = "where does the live crown begin above ground?"
result = kb.retrieve(query, k=3, threshold=0.0)
for chunk_id, sim in result.hits:
    print(f"  sim {sim:.3f}: {kb.chunk_by_id(chunk_id).text[:60]}...")

print("\n== Routing ==")
for instruction in (
    GLOSSARY[1],                           # verbatim definition: knowledge
    "draw a scatter plot of tree heights", # analysis task: agent
):
    route = kb.route(instruction)
    print(f"  {route.kind:<18} (best similarity {route.best_similarity:.3f}) "
          f"<- {instruction[:50]!r}")

print("\n== Context prompt ==")
result = kb.retrieve(GLOSSARY[1], k=1)
prompt = build_context_prompt("support height", result, kb)
print(prompt)
