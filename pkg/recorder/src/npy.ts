/**
 * Minimal NPY v1.0 reader/writer for the replay interchange format.
 *
 * Accepted subset: version 1.0, little-endian float32/float64, C order,
 * 3-dimensional (C, H, W) shape. The header is padded to a 64-byte boundary
 * so files byte-match the reference layout.
 */

const MAGIC = Buffer.from("\x93NUMPY", "latin1");

export type NpyDtype = "float32" | "float64";

export interface Tensor {
  shape: [number, number, number];
  data: Float64Array;
}

export function tensorOf(shape: [number, number, number], data?: Float64Array): Tensor {
  const size = shape[0] * shape[1] * shape[2];
  if (data !== undefined && data.length !== size) {
    throw new Error(`data length ${data.length} does not match shape ${shape}`);
  }
  return { shape, data: data ?? new Float64Array(size) };
}

export function writeNpy(tensor: Tensor, dtype: NpyDtype): Buffer {
  const [c, h, w] = tensor.shape;
  const descr = dtype === "float32" ? "<f4" : "<f8";
  let header = `{'descr': '${descr}', 'fortran_order': False, 'shape': (${c}, ${h}, ${w}), }`;
  const unpadded = MAGIC.length + 2 + 2 + header.length + 1;
  const pad = (64 - (unpadded % 64)) % 64;
  header = header + " ".repeat(pad) + "\n";

  const headerBuf = Buffer.from(header, "latin1");
  const lenBuf = Buffer.alloc(2);
  lenBuf.writeUInt16LE(headerBuf.length, 0);

  const payload =
    dtype === "float32"
      ? Buffer.from(Float32Array.from(tensor.data).buffer)
      : Buffer.from(Float64Array.from(tensor.data).buffer);
  return Buffer.concat([MAGIC, Buffer.from([1, 0]), lenBuf, headerBuf, payload]);
}

export interface ParsedNpy extends Tensor {
  dtype: NpyDtype;
}

export function readNpy(buf: Buffer): ParsedNpy {
  if (buf.length < 10 || !buf.subarray(0, 6).equals(MAGIC)) {
    throw new Error("bad magic: not an NPY file");
  }
  const major = buf[6];
  const minor = buf[7];
  if (major !== 1 || minor !== 0) {
    throw new Error(`unsupported version: ${major}.${minor} (only 1.0 accepted)`);
  }
  const headerLen = buf.readUInt16LE(8);
  const headerEnd = 10 + headerLen;
  if (buf.length < headerEnd) {
    throw new Error("truncated header");
  }
  const header = buf.subarray(10, headerEnd).toString("latin1");

  const descrMatch = header.match(/'descr':\s*'([^']+)'/);
  const orderMatch = header.match(/'fortran_order':\s*(True|False)/);
  const shapeMatch = header.match(/'shape':\s*\((\d+),\s*(\d+),\s*(\d+)\s*,?\)/);
  if (!descrMatch) throw new Error("header missing descr");
  const descr = descrMatch[1];
  if (descr !== "<f4" && descr !== "<f8") {
    throw new Error(`descr '${descr}' not supported (little-endian float32/float64 only)`);
  }
  if (!orderMatch) throw new Error("header missing fortran_order");
  if (orderMatch[1] !== "False") throw new Error("fortran_order must be False");
  if (!shapeMatch) throw new Error("shape must be a 3-tuple of positive ints");
  const shape: [number, number, number] = [
    parseInt(shapeMatch[1], 10),
    parseInt(shapeMatch[2], 10),
    parseInt(shapeMatch[3], 10),
  ];
  if (shape.some((d) => d < 1)) throw new Error("shape must be a 3-tuple of positive ints");

  const itemSize = descr === "<f4" ? 4 : 8;
  const count = shape[0] * shape[1] * shape[2];
  const payload = buf.subarray(headerEnd);
  if (payload.length !== count * itemSize) {
    throw new Error(`payload size ${payload.length} does not match shape (${count * itemSize} bytes)`);
  }
  const aligned = Buffer.from(payload); // copy for alignment before typed-array views
  const data = new Float64Array(count);
  if (descr === "<f4") {
    const view = new Float32Array(aligned.buffer, aligned.byteOffset, count);
    for (let i = 0; i < count; i++) data[i] = view[i];
  } else {
    const view = new Float64Array(aligned.buffer, aligned.byteOffset, count);
    data.set(view);
  }
  return { shape, data, dtype: descr === "<f4" ? "float32" : "float64" };
}
