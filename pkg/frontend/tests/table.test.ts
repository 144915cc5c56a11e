import { describe, expect, it } from "vitest";

import { renderTreeTable } from "../src/table.js";

describe("renderTreeTable", () => {
  it("renders columns and rows in server order", () => {
    const table = renderTreeTable({
      columns: ["tree_id", "height_m", "fallback"],
      rows: [[2, 10.0, false], [3, 7.25, true]],
    });
    const headers = [...table.querySelectorAll("th")].map((el) => el.textContent);
    expect(headers).toEqual(["tree_id", "height_m", "fallback"]);
    const rows = [...table.querySelectorAll("tbody tr")];
    expect(rows).toHaveLength(2);
    expect(rows[0].getAttribute("data-tree-id")).toBe("2");
    expect([...rows[1].querySelectorAll("td")].map((el) => el.textContent))
      .toEqual(["3", "7.250", "true"]);
  });

  it("handles empty results", () => {
    const table = renderTreeTable({ columns: ["tree_id"], rows: [] });
    expect(table.querySelectorAll("tbody tr")).toHaveLength(0);
  });
});
