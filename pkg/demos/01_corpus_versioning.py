"""
Versioned document store: ingest, update, diff, rollback
========================================================

Every ingest of a known doc_id creates a new immutable version; the audit
log records each operation. Rollback never deletes history, it appends a
copy of the chosen version as the new head.
"""

import json
import tempfile

from esap import VersionStore

root = tempfile.mkdtemp(prefix="esap-demo-")
store = VersionStore(root)

# first ingest creates version 1
doc = store.ingest("returns-policy",
                   "Customers may return any order within seven days.")
print(f"ingested {doc.doc_id} v{doc.version}")

# ingesting the same id again stacks a new version on top
doc = store.ingest("returns-policy",
                   "Customers may return any order within thirty days.")
print(f"updated  {doc.doc_id} v{doc.version}")

# both versions stay readable
for version in store.versions("returns-policy"):
    print(f"  v{version}: {store.get('returns-policy', version).text}")

# a unified diff shows what changed between any two versions
print()
print(store.diff("returns-policy", 1, 2))

# rollback appends v1's content as v3; nothing is erased
doc = store.rollback("returns-policy", 1)
print(f"rolled back -> v{doc.version}: {doc.text}")

# the audit log kept one JSON line per operation
print()
print("audit trail:")
for line in store.audit_path.read_text().splitlines():
    entry = json.loads(line)
    print(f"  {entry['op']:8s} {entry['doc_id']} v{entry['version']}")
