import { describe, expect, test } from "vitest";

import { readNpy, tensorOf, writeNpy } from "../src/npy.js";

describe("npy layout", () => {
  test("minimal float64 file is 128-byte header + 8 payload bytes", () => {
    const t = tensorOf([1, 1, 1], Float64Array.from([0.5]));
    const buf = writeNpy(t, "float64");
    expect(buf.length).toBe(136);
    expect(buf.subarray(0, 6).toString("latin1")).toBe("\x93NUMPY");
    expect(buf[6]).toBe(1);
    expect(buf[7]).toBe(0);
    expect(buf.readUInt16LE(8)).toBe(118);
    const header = buf.subarray(10, 128).toString("latin1");
    expect(header).toContain("'descr': '<f8'");
    expect(header).toContain("'fortran_order': False");
    expect(header).toContain("'shape': (1, 1, 1)");
    expect(header.endsWith("\n")).toBe(true);
  });

  test("float64 round trip is exact", () => {
    const data = Float64Array.from({ length: 24 }, (_, i) => Math.sin(i) * 3.7);
    const t = tensorOf([2, 3, 4], data);
    const parsed = readNpy(writeNpy(t, "float64"));
    expect(parsed.dtype).toBe("float64");
    expect(parsed.shape).toEqual([2, 3, 4]);
    expect(Array.from(parsed.data)).toEqual(Array.from(data));
  });

  test("float32 narrows then widens", () => {
    const data = Float64Array.from([0.1, 0.2, 0.3, 0.4]);
    const t = tensorOf([1, 2, 2], data);
    const parsed = readNpy(writeNpy(t, "float32"));
    expect(parsed.dtype).toBe("float32");
    expect(parsed.data[0]).toBe(Math.fround(0.1));
  });

  test("rejects foreign inputs", () => {
    expect(() => readNpy(Buffer.from("not an npy file at all"))).toThrow(/magic/);
    const v2 = Buffer.from(writeNpy(tensorOf([1, 1, 1]), "float64"));
    v2[6] = 2;
    expect(() => readNpy(v2)).toThrow(/version/);
    const truncated = writeNpy(tensorOf([1, 2, 2]), "float64").subarray(0, 130);
    expect(() => readNpy(Buffer.from(truncated))).toThrow(/payload/);
  });

  test("rejects fortran order and unsupported dtypes", () => {
    const base = writeNpy(tensorOf([1, 1, 1]), "float64");
    const fortran = Buffer.from(
      base.toString("latin1").replace("'fortran_order': False", "'fortran_order': True "),
      "latin1",
    );
    expect(() => readNpy(fortran)).toThrow(/fortran_order/);
    const intDescr = Buffer.from(base.toString("latin1").replace("<f8", "<i8"), "latin1");
    expect(() => readNpy(intDescr)).toThrow(/descr/);
  });
});
