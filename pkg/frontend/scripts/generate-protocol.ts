// Emits src/protocol.ts from schema/protocol.schema.json.  The generated
// file is checked in; tests regenerate and diff to catch drift.
import { readFileSync, writeFileSync } from "node:fs";
import { dirname, join } from "node:path";
import { fileURLToPath } from "node:url";

const here = dirname(fileURLToPath(import.meta.url));
const schemaPath = join(here, "..", "schema", "protocol.schema.json");
const outPath = join(here, "..", "src", "protocol.ts");

interface PropertySchema {
  const?: string;
  type?: string;
  items?: PropertySchema;
}

interface MessageSchema {
  direction: "client" | "server";
  properties: Record<string, PropertySchema>;
  required: string[];
}

function tsType(prop: PropertySchema): string {
  if (prop.const !== undefined) return JSON.stringify(prop.const);
  switch (prop.type) {
    case "number":
    case "integer":
      return "number";
    case "string":
      return "string";
    case "object":
      return "Record<string, unknown>";
    case "array":
      return `${tsType(prop.items ?? {})}[]`;
    default:
      return "unknown";
  }
}

export function generate(schemaJson: string): string {
  const schema = JSON.parse(schemaJson);
  const lines: string[] = [
    "// GENERATED from schema/protocol.schema.json - do not edit by hand.",
    "// Regenerate with: npm run generate-protocol",
    "",
  ];
  const byDirection: Record<string, string[]> = { client: [], server: [] };
  for (const [name, def] of Object.entries<MessageSchema>(schema.definitions)) {
    lines.push(`export interface ${name} {`);
    for (const [prop, propSchema] of Object.entries(def.properties)) {
      const optional = def.required.includes(prop) ? "" : "?";
      lines.push(`  ${prop}${optional}: ${tsType(propSchema)};`);
    }
    lines.push("}", "");
    byDirection[def.direction].push(name);
  }
  lines.push(`export type ClientMessage = ${byDirection.client.join(" | ")};`);
  lines.push(`export type ServerMessage = ${byDirection.server.join(" | ")};`);
  lines.push("");
  return lines.join("\n");
}

if (process.argv[1] === fileURLToPath(import.meta.url)) {
  writeFileSync(outPath, generate(readFileSync(schemaPath, "utf-8")));
  console.log(`wrote ${outPath}`);
}
