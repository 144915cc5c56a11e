// Tree table: render a structured-query result as a plain HTML table.

import type { QueryResultDoc } from "./types.js";

function formatCell(value: number | string | boolean | null): string {
  if (value === null) return "";
  if (typeof value === "number" && !Number.isInteger(value)) return value.toFixed(3);
  return String(value);
}

export function renderTreeTable(result: QueryResultDoc): HTMLTableElement {
  const table = document.createElement("table");
  table.className = "tree-table";

  const head = table.createTHead().insertRow();
  for (const column of result.columns) {
    const th = document.createElement("th");
    th.textContent = column;
    head.append(th);
  }

  const body = table.createTBody();
  for (const row of result.rows) {
    const tr = body.insertRow();
    tr.dataset.treeId = String(row[result.columns.indexOf("tree_id")] ?? "");
    for (const value of row) {
      tr.insertCell().textContent = formatCell(value);
    }
  }
  return table;
}
